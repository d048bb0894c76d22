use proptest::prelude::*;
use serde_json::{json, Value};
use xlris_sim::config::merge;
use xlris_sim::export::{fmt_float, Cell, Table};

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i32>().prop_map(Value::from),
        any::<bool>().prop_map(Value::from),
        "[a-z]{0,4}".prop_map(Value::from)
    ]
}

fn doc() -> impl Strategy<Value = Value> {
    leaf().prop_recursive(3, 16, 4, |inner| prop::collection::btree_map("[a-c]", inner, 0..4).prop_map(|m| json!(m)))
}

proptest! {
    #[test]
    fn floats_keep_twelve_significant_digits(x in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let s = fmt_float(x);
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-12 * x.abs(), "{x} -> {s}");
        prop_assert_eq!(fmt_float(back), s);
    }

    #[test]
    fn merging_onto_itself_is_identity(a in doc()) {
        let mut m = a.clone();
        merge(&mut m, a.clone());
        prop_assert_eq!(m, a);
    }

    #[test]
    fn merging_onto_empty_object_yields_the_overlay(a in doc()) {
        let mut m = json!({});
        merge(&mut m, a.clone());
        prop_assert_eq!(m, a);
    }

    #[test]
    fn overlay_leaves_win(a in doc(), b in doc()) {
        let mut m = a.clone();
        merge(&mut m, b.clone());
        if let (Value::Object(_), Value::Object(bo)) = (&a, &b) {
            for (k, v) in bo {
                if !v.is_object() {
                    prop_assert_eq!(&m[k], v);
                }
            }
        } else {
            prop_assert_eq!(m, b);
        }
    }

    #[test]
    fn csv_rows_round_trip(rows in prop::collection::vec((any::<i32>(), -1e6f64..1e6, "[a-z ]{0,6}"), 1..8)) {
        let mut t = Table::new("t", &["i", "x", "s"]);
        for (i, x, s) in &rows {
            t.push(vec![Cell::Int(*i as i64), Cell::from(*x), Cell::from(s.clone())]);
        }
        let bytes = t.to_csv().unwrap();
        let mut r = csv::Reader::from_reader(&bytes[..]);
        let got: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        prop_assert_eq!(got.len(), rows.len());
        for (rec, (i, x, s)) in got.iter().zip(&rows) {
            prop_assert_eq!(rec[0].parse::<i64>().unwrap(), *i as i64);
            prop_assert!((rec[1].parse::<f64>().unwrap() - x).abs() <= 5e-12 * x.abs());
            prop_assert_eq!(&rec[2], s.as_str());
        }
    }
}

#[test]
fn non_finite_floats() {
    assert_eq!(fmt_float(f64::NAN), "nan");
    assert_eq!(fmt_float(f64::INFINITY), "inf");
    assert_eq!(fmt_float(f64::NEG_INFINITY), "-inf");
    assert_eq!(fmt_float(1.0), "1.00000000000e0");
}
