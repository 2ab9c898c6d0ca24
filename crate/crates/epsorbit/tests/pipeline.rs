//! Cross-module integration: shipped fixture files, the borderline
//! superattracting regime, and the rank-certified multiplicity upgrade.

use epsorbit::estimator::{critical_order_certified, CriticalOrder, Thresholds};
use epsorbit::expr::parse;
use epsorbit::neighborhood::{profile, GridSpec, ProfileInput};
use epsorbit::orbit::Orbit;
use epsorbit::poincare::{builtin_field_json, PlanarField, BUILTIN_FIELDS};
use epsorbit::scales::{
    builtin, builtin_file, jacobian_rank, ChebyshevScale, MultiplicityBound, BUILTIN_SCALES,
};

#[test]
fn shipped_scale_files_match_builtins() {
    for name in BUILTIN_SCALES {
        let path = format!("{}/../../scales/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
        let file: epsorbit::scales::ScaleFile = serde_json::from_str(&text).unwrap();
        let expect = builtin_file(name).unwrap();
        assert_eq!(file.name, expect.name);
        assert_eq!(file.d, expect.d);
        assert_eq!(file.members, expect.members);
        assert_eq!(file.indices, expect.indices);
        // and they load into working scales
        ChebyshevScale::from_json(&text).unwrap();
    }
}

#[test]
fn shipped_field_files_match_builtins() {
    for name in BUILTIN_FIELDS {
        let path = format!("{}/../../fields/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
        assert_eq!(text, builtin_field_json(name).unwrap());
        PlanarField::from_json(&text).unwrap();
    }
}

/// f'(0) = 1 (g superattracts): |A_ε| follows ε·log(-log ε). Separating that
/// from ε(-log ε) needs many decades and tolerates a wider band.
#[test]
fn superattracting_boundary_case_band() {
    // orbit of g = x² built by exact squaring: computing it as x - (x - x²)
    // stalls once x² drops below one ulp of x
    let mut points = Vec::new();
    let mut x = 0.3f64;
    while x > 1e-40 {
        points.push(x);
        x = x * x;
    }
    let orbit = Orbit::from_points(points, epsorbit::orbit::Source::Crossings).unwrap();
    let prof = profile(ProfileInput::Orbit(&orbit), GridSpec::new(1e-3, 1e-15, 8)).unwrap();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for r in &prof.rows {
        let v = r.total / (r.epsilon * (-r.epsilon.ln()).ln());
        lo = lo.min(v);
        hi = hi.max(v);
    }
    assert!(hi / lo <= 4.0, "band [{lo:.3}, {hi:.3}]");
}

#[test]
fn loop_scale_reads_homoclinic_coefficients() {
    // at the loop parameter the displacement develops as
    // β₁x + α₂x²(-log x) + ...; reading a pure x²(-log x) term lands at
    // position 2 of the loop scale
    let scale = builtin("loop").unwrap();
    let f = parse("x^2*(-log(x))").unwrap();
    assert_eq!(
        scale.multiplicity_bound(&f).unwrap(),
        MultiplicityBound::Bound {
            k0: 2,
            divergent_below: false
        }
    );
    let f = parse("0.7*x").unwrap();
    assert_eq!(
        scale.multiplicity_bound(&f).unwrap(),
        MultiplicityBound::Bound {
            k0: 1,
            divergent_below: false
        }
    );
}

#[test]
fn abelian_and_two_cycle_read_coefficients() {
    let scale = builtin("abelian").unwrap();
    let f = parse("x^0.5").unwrap();
    assert_eq!(
        scale.multiplicity_bound(&f).unwrap(),
        MultiplicityBound::Bound {
            k0: 1,
            divergent_below: false
        }
    );
    let scale = builtin("two_cycle").unwrap();
    let f = parse("3*x^2*(-log(x))^2").unwrap();
    assert_eq!(
        scale.multiplicity_bound(&f).unwrap(),
        MultiplicityBound::Bound {
            k0: 2,
            divergent_below: false
        }
    );
}

/// When the coefficient map of the family has full rank, the bound upgrades
/// to an equality in the report.
#[test]
fn rank_certificate_upgrades_bound() {
    let rank = jacobian_rank(
        |l: &[f64]| Ok(vec![l[0], l[1], l[2]]),
        &[0.0, 0.0, 1.0],
        3,
        1e-7,
    )
    .unwrap();
    assert_eq!(rank, 3);

    let scale = builtin("power").unwrap();
    let f = parse("x^3").unwrap();
    let prof = profile(
        ProfileInput::Map {
            f: &f,
            x0: 0.4,
            x_min: 1e-300,
            n_max: 5_000_000,
        },
        GridSpec::new(1e-3, 1e-9, 8),
    )
    .unwrap();
    let report =
        critical_order_certified(&prof, &scale, &Thresholds::default(), rank == 3).unwrap();
    assert_eq!(report.m, CriticalOrder::Order(3));
    assert!(report.bound_exact);
}
