use std::sync::Arc;

use approx::assert_relative_eq;
use orlicz::growth::*;
use orlicz::phi::{PhiFunction, Power};
use orlicz::sampling::LogGrid;
use orlicz::structures::*;

#[test]
fn cubic_p_laplace_certificate() {
    let cert = build_growth_function(Arc::new(Model::p_laplace(3.0, 2)), &GrowthOptions::autonomous()).unwrap();
    for t in LogGrid::new(1e-3, 1e3, 25).values() {
        assert_relative_eq!(cert.phi.deriv([0.5, 0.5], t), 2.0 * t * t, max_relative = 1e-2);
    }
    assert_relative_eq!(cert.ellipticity_ratio, 0.5, max_relative = 0.05);
    assert!(cert.residuals.upper >= -1e-9 && cert.residuals.lower >= -1e-9);
}

#[test]
fn quadratic_equivalence_constants() {
    let m = Model::p_laplace(2.0, 2);
    let r = check_equivalences(&Power::normalized(2.0), Some(&m), Some(&m), &SphereSample::default()).unwrap();
    assert_relative_eq!(r.c1.unwrap(), 2.0, max_relative = 1e-2);
    assert_relative_eq!(r.c2.unwrap(), 1.0, max_relative = 1e-2);
}

#[test]
fn every_family_is_certified() {
    for fam in registry() {
        let m = build_model(&fam.example).unwrap();
        let cert = build_growth_function(Arc::new(m), &GrowthOptions::default()).unwrap();
        assert!(cert.nu > 0.0 && cert.lambda >= cert.nu, "{}", fam.name);
        assert!(cert.q1 >= cert.p1 && cert.p1 > 1.0, "{}", fam.name);
    }
}
