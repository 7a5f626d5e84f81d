//! Exact-diagonalization toolkit for Z2 lattice gauge theory in (2+1)D.
//!
//! The crate is organized around dual formulations of the Z2 gauge Hamiltonian
//! in which bulk Gauss laws are eliminated and the entanglement structure of a
//! bipartition becomes accessible by an ordinary partial trace:
//!
//! * [`pauli`] — signed Pauli strings on a flat qubit register, the operator
//!   substrate for every Hamiltonian and projector in the crate.
//! * [`lattice`] — lattice geometries, the original (gauge-variant)
//!   formulation used as a correctness oracle, and the dual constructions for
//!   the periodic torus, the open cylinder and the cut torus.
//! * [`spectra`] — numerical backend: dense and sector-reduced
//!   diagonalization, Lanczos ground states, Krylov time evolution and
//!   thermal density matrices.
//! * [`ent`] — partial traces, symmetry-resolved entanglement spectra,
//!   entanglement gaps, critical-coupling extraction and the perturbative
//!   entanglement Hamiltonian.
//! * [`varfit`] — variational reconstruction of the entanglement Hamiltonian
//!   by relative-entropy minimization.
//! * [`stats`] — level statistics of entanglement spectra: unfolding,
//!   spacing/ratio distributions against random-matrix references,
//!   Bhattacharyya distances and the self-similar scaling fit.
//! * [`harness`] — experiment configuration, pipelines and result emission
//!   backing the `z2ed` command-line tool.

pub mod ent;
pub mod harness;
pub mod lattice;
pub mod pauli;
pub mod spectra;
pub mod stats;
pub mod varfit;

pub use num_complex::Complex64;
