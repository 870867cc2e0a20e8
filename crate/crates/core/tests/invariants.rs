//! Property-based invariants over the core data structures and parsers.

use proptest::prelude::*;

use autoreport::data::{self, CellValue, Column, TableResult, TypeTag};
use autoreport::evaluation::{argmax, pearson, ComparisonTensor};
use autoreport::researcher::extract_sql;

fn cell_strategy() -> impl Strategy<Value = CellValue> {
    prop_oneof![
        Just(CellValue::Null),
        any::<i64>().prop_map(CellValue::Int),
        (-1.0e9..1.0e9f64).prop_map(CellValue::Real),
        "[a-zA-Z0-9 _%.,-]{0,20}".prop_map(CellValue::Text),
    ]
}

fn table_strategy() -> impl Strategy<Value = TableResult> {
    (1usize..6, 0usize..8, any::<bool>()).prop_flat_map(|(cols, rows, truncated)| {
        let columns: Vec<Column> = (0..cols)
            .map(|c| Column { name: format!("col_{c}"), type_tag: TypeTag::Text })
            .collect();
        proptest::collection::vec(
            proptest::collection::vec(cell_strategy(), cols),
            rows,
        )
        .prop_map(move |rows| TableResult {
            columns: columns.clone(),
            row_count: rows.len(),
            rows,
            truncated,
        })
    })
}

proptest! {
    /// Table results survive a JSON round trip bit-for-bit.
    #[test]
    fn table_json_round_trips(table in table_strategy()) {
        let text = data::serialize_json(&table);
        let back = data::parse_json(&text).unwrap();
        prop_assert_eq!(back, table);
    }

    /// A single fenced SQL statement is extracted verbatim.
    #[test]
    fn fenced_sql_round_trips(body in "SELECT [a-zA-Z0-9_, ]{1,40} FROM orders") {
        let reply = format!("Running a query.\n```\n{body}\n```");
        let query = extract_sql(&reply).unwrap().unwrap();
        prop_assert_eq!(query.text.trim(), body.trim());
    }

    /// Correlation is invariant under positive affine maps of either input.
    #[test]
    fn pearson_affine_invariance(
        points in proptest::collection::vec((-100i32..100, -100i32..100), 3..30),
        a in 1u32..50,
        b in -100i32..100,
    ) {
        let xs: Vec<f64> = points.iter().map(|(x, _)| *x as f64).collect();
        let ys: Vec<f64> = points.iter().map(|(_, y)| *y as f64).collect();
        if let Ok(r) = pearson(&xs, &ys) {
            let xs2: Vec<f64> = xs.iter().map(|x| a as f64 * x + b as f64).collect();
            let r2 = pearson(&xs2, &ys).unwrap();
            prop_assert!((r - r2).abs() <= 1e-12);
        }
    }

    /// Relabeling the tournament participants relabels the aggregate scores
    /// the same way, and scores always sum to zero.
    #[test]
    fn tournament_permutation_equivariance(
        n in 2usize..6,
        k in 1usize..4,
        seed in any::<u64>(),
        rotate in 1usize..5,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut tensor = ComparisonTensor::new(n, k);
        let mut values = vec![vec![vec![0i8; k]; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                for r in 0..k {
                    let v = rng.gen_range(-1..=1) as i8;
                    tensor.set(i, j, r, v);
                    values[i][j][r] = v;
                    values[j][i][r] = -v;
                }
            }
        }
        let scores = tensor.aggregate().scores;
        prop_assert!(scores.iter().sum::<f64>().abs() <= 1e-12);

        // Apply a cyclic relabeling p(i) = (i + rotate) mod n.
        let p = |i: usize| (i + rotate) % n;
        let mut permuted = ComparisonTensor::new(n, k);
        for i in 0..n {
            for j in 0..n {
                if i < j {
                    for r in 0..k {
                        let (pi, pj) = (p(i), p(j));
                        let (a, b, v) = if pi < pj {
                            (pi, pj, values[i][j][r])
                        } else {
                            (pj, pi, -values[i][j][r])
                        };
                        permuted.set(a, b, r, v);
                    }
                }
            }
        }
        let pscores = permuted.aggregate().scores;
        for i in 0..n {
            prop_assert!((pscores[p(i)] - scores[i]).abs() <= 1e-12);
        }

        // With a unique maximum, selection follows the relabeling.
        let best = argmax(&scores);
        if scores.iter().filter(|&&s| (s - scores[best]).abs() <= 1e-12).count() == 1 {
            prop_assert_eq!(argmax(&pscores), p(best));
        }
    }
}
