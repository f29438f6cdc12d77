use parcme_core::pargeo::*;
use parcme_core::regdist::*;
use parcme_core::halfderiv::*;
fn main() {
    let mk = |de: i32| {
        let delta = (2.0f64).powi(-de);
        let t_cells = (1.0 / (delta * delta)) as usize;
        let grid = ParaGrid::new(0, delta, 0.0, t_cells, &[], &[]);
        let h = ScalarField::from_fn(grid, |t, _| (t - 0.5).abs().sqrt());
        let hw = whitney_wrt_h(&h, 0, de).unwrap();
        build_h_field(&h, hw)
    };
    let coarse = mk(8); let fine = mk(9);
    for floor in [1.0/32.0, 1.0/16.0] {
        let mut worst = 0.0f64;
        for c in [0.35, 0.5, 0.65] {
            for rho in [0.25, 0.18, 0.12] {
                let (_, rf) = carleson_nu_with_floor(&fine.sampled, c, &[], rho, Some(floor)).unwrap();
                let (_, rc) = carleson_nu_with_floor(&coarse.sampled, c, &[], rho, Some(floor)).unwrap();
                let d = (rf - rc).abs() / rc.abs().max(1e-300);
                worst = worst.max(d);
            }
        }
        println!("floor {floor}: worst drift {worst:.4}");
    }
}
