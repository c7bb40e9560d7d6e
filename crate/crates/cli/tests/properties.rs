use prmix_cli::config::parse_grid;
use prmix_cli::dataset::{parse_frequency, parse_values, write_values};
use proptest::prelude::*;

proptest! {
    #[test]
    fn frequency_expansion_preserves_total(rows in prop::collection::vec((0u32..60, 1u64..40), 1..20)) {
        let text: String = rows.iter().map(|(v, c)| format!("{v},{c}\n")).collect();
        let d = parse_frequency(&text, "t").unwrap();
        let total: u64 = rows.iter().map(|r| r.1).sum();
        prop_assert_eq!(d.len() as u64, total);
        prop_assert!(d.observations.windows(2).all(|w| w[0] <= w[1]));
        for (v, _) in &rows {
            let want: u64 = rows.iter().filter(|r| r.0 == *v).map(|r| r.1).sum();
            let got = d.observations.iter().filter(|&&y| y == f64::from(*v)).count() as u64;
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn written_values_read_back_bit_exact(values in prop::collection::vec(-1e6f64..1e6, 1..50)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        write_values(&path, "round trip", &values).unwrap();
        let d = parse_values(&std::fs::read_to_string(&path).unwrap(), "t").unwrap();
        prop_assert_eq!(d.observations.len(), values.len());
        for (a, b) in d.observations.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn linspace_grid_has_requested_count(lo in -50.0f64..50.0, width in 0.5f64..100.0, count in 2usize..200) {
        let spec = format!("linspace:{lo}:{}:{count}", lo + width);
        let (l, h, points) = parse_grid(&spec).unwrap();
        prop_assert_eq!(points.len(), count);
        prop_assert_eq!(points[0], l);
        prop_assert!((points[count - 1] - h).abs() <= 1e-9 * h.abs().max(1.0));
        prop_assert!(points.windows(2).all(|w| w[0] < w[1]));
    }
}
