use z2ed::lattice::*;
use z2ed::spectra::XSectorBasis;
use z2ed::pauli::PauliString;
fn main() {
    for (vx, vy) in [(1i8,1i8),(1,-1),(-1,1),(-1,-1)] {
        let cut = build_dual_cut_torus(LatticeGeometry::cut_torus(2,2,2), Coupling::Finite(0.9), WindingMode::Fixed{vx,vy}).unwrap();
        let k = cut.register.register_size();
        let gauss = cut.register.boundary_gauss_ops().unwrap();
        let mut prod = PauliString::identity(k);
        for g in &gauss { prod = prod.multiply(g).unwrap(); print!("{g}  "); }
        println!();
        println!("vx={vx} vy={vy}: product of all = {prod}");
        let syms: Vec<_> = gauss.iter().map(|g| (*g, 1i8)).collect();
        let basis = XSectorBasis::build(k, &syms).unwrap();
        println!("  sector dim {}", basis.dim());
    }
}
