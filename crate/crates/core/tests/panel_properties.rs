mod common;

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use proptest::prelude::*;
use scpanel::ingest::{Category, DailyCountSeries};
use scpanel::panel::*;

fn daily(unit: &str, start: NaiveDate, counts: Vec<u64>) -> DailyCountSeries {
    DailyCountSeries {
        city_id: unit.into(),
        category: Category::Theft,
        start,
        counts,
    }
}

fn design(start: NaiveDate, intervention: NaiveDate, end: NaiveDate, block: u32) -> StudyDesign {
    StudyDesign {
        window_start: start,
        intervention_date: intervention,
        window_end: end,
        block_len_days: block,
        treated_unit: "a".into(),
        populations: BTreeMap::from([("a".to_string(), 1e5), ("b".to_string(), 2e5)]),
        min_pre_blocks: 2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blocks_sum_the_covered_days(
        counts in proptest::collection::vec(0u64..50, 200..260),
        block in 1u32..15,
        pre_days in 60i64..120,
    ) {
        let start = NaiveDate::from_ymd_opt(2019, 6, 1).unwrap();
        let series = daily("a", start, counts.clone());
        let t_int = start + Days::new(pre_days as u64);
        let d = design(start, t_int, series.end(), block);
        let b = aggregate_blocks(&series, &d).unwrap();
        prop_assert_eq!(b.block_starts[b.t0], t_int);
        let first = (b.block_starts[0] - start).num_days() as usize;
        let covered = &counts[first..first + b.values.len() * block as usize];
        prop_assert_eq!(b.values.iter().sum::<f64>(), covered.iter().sum::<u64>() as f64);
        prop_assert!(first < block as usize);
    }

    #[test]
    fn shifting_calendar_by_whole_blocks_commutes(
        counts in proptest::collection::vec(0u64..50, 200..260),
        block in 1u32..15,
        shift_blocks in 1u64..10,
    ) {
        let start = NaiveDate::from_ymd_opt(2019, 6, 1).unwrap();
        let t_int = start + Days::new(100);
        let series = daily("a", start, counts.clone());
        let base = aggregate_blocks(&series, &design(start, t_int, series.end(), block)).unwrap();

        let k = Days::new(shift_blocks * u64::from(block));
        let moved = daily("a", start + k, counts);
        let shifted = aggregate_blocks(&moved, &design(start + k, t_int + k, moved.end(), block)).unwrap();
        prop_assert_eq!(&base.values, &shifted.values);
        prop_assert_eq!(base.t0, shifted.t0);
        let expect: Vec<NaiveDate> = base.block_starts.iter().map(|d| *d + k).collect();
        prop_assert_eq!(shifted.block_starts, expect);
    }

    #[test]
    fn pre_period_means_are_zero(seed in 1u64..10_000, donors in 2usize..8, t0 in 5usize..30) {
        let panel = common::random_panel(seed, donors, t0 + 6, t0);
        let y = panel.y();
        for j in 0..panel.n_units() {
            let pre = y.column(j).rows(0, t0).sum() / t0 as f64;
            let scale = panel.rates().column(j).amax().max(1.0);
            prop_assert!(pre.abs() < 1e-12 * scale, "unit {} pre mean {}", j, pre);
        }
    }

    #[test]
    fn dropping_a_donor_leaves_other_columns_bit_identical(seed in 1u64..10_000, donors in 3usize..8, drop in 1usize..3) {
        let panel = common::random_panel(seed, donors, 40, 30);
        let keep: Vec<usize> = (0..panel.n_units()).filter(|j| *j != drop).collect();
        let sub = panel.select_units(&keep).unwrap();
        // rebuilding from the kept rates demeans each column on its own
        let rebuilt = Panel::from_rates(
            keep.iter().map(|&j| panel.units()[j].clone()).collect(),
            panel.block_starts().to_vec(),
            panel.block_len_days(),
            panel.t0(),
            nalgebra::DMatrix::from_fn(panel.t(), keep.len(), |i, k| panel.rates()[(i, keep[k])]),
            keep.iter().map(|&j| panel.populations()[j]).collect(),
        )
        .unwrap();
        for (k, &j) in keep.iter().enumerate() {
            for i in 0..panel.t() {
                prop_assert_eq!(sub.y()[(i, k)].to_bits(), panel.y()[(i, j)].to_bits());
                prop_assert_eq!(rebuilt.y()[(i, k)].to_bits(), panel.y()[(i, j)].to_bits());
            }
        }
    }
}

#[test]
fn per_capita_divides_by_population() {
    assert_eq!(per_capita(&[10.0, 0.0, 5.0], 5.0).unwrap(), vec![2.0, 0.0, 1.0]);
    assert!(per_capita(&[1.0], 0.0).is_err());
    assert!(per_capita(&[1.0], f64::NAN).is_err());
}

#[test]
fn assembled_panel_puts_treated_first_and_counts_survive() {
    let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    let t_int = NaiveDate::from_ymd_opt(2019, 3, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(2019, 3, 28).unwrap();
    let n = (end - start).num_days() as usize + 1;
    let mut d = design(start, t_int, end, 7);
    d.treated_unit = "b".into();
    let mut blocks = BTreeMap::new();
    for (u, c) in [("a", 2u64), ("b", 3)] {
        let s = daily(u, start, vec![c; n]);
        blocks.insert(u.to_string(), aggregate_blocks(&s, &d).unwrap());
    }
    let panel = assemble_panel(&blocks, &d).unwrap();
    assert_eq!(panel.units(), ["b", "a"]);
    assert_eq!(panel.intervention_date(), t_int);
    assert_eq!(panel.t() - panel.t0(), 4);
    for i in 0..panel.t() {
        assert!((panel.raw_counts()[(i, 0)] - 21.0).abs() < 1e-9);
        assert!((panel.raw_counts()[(i, 1)] - 14.0).abs() < 1e-9);
    }
}

#[test]
fn panel_csv_round_trip_is_exact() {
    let panel = common::random_panel(77, 5, 30, 24).map_rates(|v| v * 1e-4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    panel.write_csv(&path).unwrap();
    let back = Panel::read_csv(&path).unwrap();
    assert_eq!(back, panel);
}
