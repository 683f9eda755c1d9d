mod common;

use allocbench::market_data::{compute_returns, load_prices, prices_from_returns, synth_returns, CsvSchema, PriceTable};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn window(p: &PriceTable) -> (chrono::NaiveDate, chrono::NaiveDate) {
    (p.dates()[0], *p.dates().last().unwrap())
}

proptest! {
    #[test]
    fn returns_survive_a_price_round_trip(instance in 0u64..500, n in 2usize..5, periods in 2usize..60) {
        let r = common::random_market(n, periods, instance);
        let prices = prices_from_returns(&r, 100.0).unwrap();
        let (start, end) = window(&prices);
        let back = compute_returns(&prices, start, end, r.tickers()).unwrap();
        prop_assert_eq!(back.periods(), r.periods());
        for (a, b) in back.as_slice().iter().zip(r.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn unrequested_tickers_do_not_change_returns(instance in 0u64..500, periods in 2usize..40) {
        let r = common::random_market(3, periods, instance);
        let prices = prices_from_returns(&r, 50.0).unwrap();
        let (start, end) = window(&prices);
        let wanted = &r.tickers()[..2];
        let full = compute_returns(&prices, start, end, wanted).unwrap();
        let reduced = PriceTable::new(
            wanted.to_vec(),
            prices.dates().to_vec(),
            wanted.iter().map(|t| prices.series(t).unwrap().to_vec()).collect(),
        )
        .unwrap();
        prop_assert_eq!(compute_returns(&reduced, start, end, wanted).unwrap(), full);
    }

    #[test]
    fn synthetic_draws_are_bit_stable(seed in any::<u64>()) {
        let cov = DMatrix::from_row_slice(2, 2, &[0.0004, 0.0001, 0.0001, 0.0002]);
        let a = synth_returns(2, 50, seed, &[0.001, 0.0], &cov).unwrap();
        let b = synth_returns(2, 50, seed, &[0.001, 0.0], &cov).unwrap();
        let bits = |m: &allocbench::ReturnsMatrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn ten_rows_with_one_gap_keep_nine() {
    let mut csv = String::from("date,AAA,BBB\n");
    for d in 1..=10 {
        let b = if d == 6 { String::new() } else { format!("{}", 20 + d) };
        csv.push_str(&format!("2024-01-{d:02},{},{b}\n", 10 + d));
    }
    let loaded = load_prices(csv.as_bytes(), &CsvSchema::default()).unwrap();
    assert_eq!(loaded.table.len(), 9);
    assert_eq!(loaded.dropped_rows, 1);
}
