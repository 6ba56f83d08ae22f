//! Checks the color-difference implementation against the published
//! verification dataset, with an independently written reference
//! implementation recomputing every pair from its Lab inputs. The fixture
//! value, the reference value and the library value must all agree, so a
//! transcription error in any one of the three is caught.

use dtrend_core::colorspace::{ciede2000, LabColor};

/// Reference CIEDE2000 written separately from the library version:
/// radians throughout, hue means computed via vector-style branch tests.
fn de2000_reference(l1: f64, a1: f64, b1: f64, l2: f64, a2: f64, b2: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let two_pi = 2.0 * pi;
    let c1 = a1.hypot(b1);
    let c2 = a2.hypot(b2);
    let mc = 0.5 * (c1 + c2);
    let g = 0.5 * (1.0 - (mc.powi(7) / (mc.powi(7) + 25f64.powi(7))).sqrt());
    let aa1 = a1 * (1.0 + g);
    let aa2 = a2 * (1.0 + g);
    let cc1 = aa1.hypot(b1);
    let cc2 = aa2.hypot(b2);
    let h1 = if cc1 == 0.0 {
        0.0
    } else {
        let h = b1.atan2(aa1);
        if h < 0.0 { h + two_pi } else { h }
    };
    let h2 = if cc2 == 0.0 {
        0.0
    } else {
        let h = b2.atan2(aa2);
        if h < 0.0 { h + two_pi } else { h }
    };
    let dl = l2 - l1;
    let dc = cc2 - cc1;
    let dh = if cc1 * cc2 == 0.0 {
        0.0
    } else {
        let mut d = h2 - h1;
        if d > pi {
            d -= two_pi;
        }
        if d < -pi {
            d += two_pi;
        }
        d
    };
    let dhh = 2.0 * (cc1 * cc2).sqrt() * (0.5 * dh).sin();
    let ml = 0.5 * (l1 + l2);
    let mcc = 0.5 * (cc1 + cc2);
    let mh = if cc1 * cc2 == 0.0 {
        h1 + h2
    } else {
        let mut m = 0.5 * (h1 + h2);
        if (h1 - h2).abs() > pi {
            if h1 + h2 < two_pi {
                m += pi;
            } else {
                m -= pi;
            }
        }
        m
    };
    let t = 1.0 - 0.17 * (mh - pi / 6.0).cos() + 0.24 * (2.0 * mh).cos()
        + 0.32 * (3.0 * mh + pi / 30.0).cos()
        - 0.20 * (4.0 * mh - 63.0 * pi / 180.0).cos();
    let dtheta = (pi / 6.0) * (-(((mh * 180.0 / pi - 275.0) / 25.0).powi(2))).exp();
    let rc = 2.0 * (mcc.powi(7) / (mcc.powi(7) + 25f64.powi(7))).sqrt();
    let sl = 1.0 + 0.015 * (ml - 50.0).powi(2) / (20.0 + (ml - 50.0).powi(2)).sqrt();
    let sc = 1.0 + 0.045 * mcc;
    let sh = 1.0 + 0.015 * mcc * t;
    let rt = -(2.0 * dtheta).sin() * rc;
    let fl = dl / sl;
    let fc = dc / sc;
    let fh = dhh / sh;
    (fl * fl + fc * fc + fh * fh + rt * fc * fh).sqrt()
}

fn load_pairs() -> Vec<[f64; 7]> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/ciede2000_pairs.csv");
    let text = std::fs::read_to_string(path).expect("fixture present");
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let vals: Vec<f64> = line.split(',').map(|v| v.trim().parse().unwrap()).collect();
            assert_eq!(vals.len(), 7, "bad fixture row: {line}");
            [vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6]]
        })
        .collect()
}

#[test]
fn verification_pairs_match_fixture_and_reference() {
    let pairs = load_pairs();
    assert_eq!(pairs.len(), 34);
    for (i, row) in pairs.iter().enumerate() {
        let [l1, a1, b1, l2, a2, b2, want] = *row;
        let oracle = de2000_reference(l1, a1, b1, l2, a2, b2);
        assert!(
            (oracle - want).abs() <= 1e-4,
            "pair {}: reference {oracle:.6} vs fixture {want:.6} — fixture row inconsistent",
            i + 1
        );
        let got = ciede2000(
            &LabColor { l: l1, a: a1, b: b1 },
            &LabColor { l: l2, a: a2, b: b2 },
        );
        assert!(
            (got - want).abs() <= 1e-4,
            "pair {}: library {got:.6} vs fixture {want:.6}",
            i + 1
        );
    }
}
