use super::types::{MergedRecord, Origin, SequenceWindow};

/// Number of windows produced by [`window_segments`].
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if window == 0 || stride == 0 || len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// Cuts a merged series into overlapping windows starting at
/// `0, stride, 2·stride, …`. A window is labeled 1 iff any of its records is.
pub fn window_segments(
    series: &[MergedRecord],
    window: usize,
    stride: usize,
    individual: &str,
    sequence: &str,
) -> Vec<SequenceWindow> {
    let n = window_count(series.len(), window, stride);
    (0..n)
        .map(|k| {
            let start = k * stride;
            let slice = &series[start..start + window];
            let mut values = Vec::with_capacity(window * 9);
            for r in slice {
                values.extend_from_slice(&r.features);
            }
            let label = u8::from(slice.iter().any(|r| r.label == 1));
            SequenceWindow::new(
                window,
                9,
                values,
                label,
                Origin {
                    individual: individual.to_string(),
                    sequence: sequence.to_string(),
                    start,
                    synthetic: false,
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(len: usize, falls: &[usize]) -> Vec<MergedRecord> {
        (0..len)
            .map(|i| MergedRecord {
                features: [i as f64; 9],
                label: u8::from(falls.contains(&i)),
            })
            .collect()
    }

    #[test]
    fn count_examples() {
        assert_eq!(window_segments(&series(100, &[]), 20, 1, "A", "A01").len(), 81);
        assert!(window_segments(&series(19, &[]), 20, 1, "A", "A01").is_empty());
        assert_eq!(window_count(0, 1, 1), 0);
    }

    #[test]
    fn fall_record_marks_window() {
        let w = window_segments(&series(30, &[25]), 20, 1, "A", "A01");
        for win in &w {
            let covers = win.origin.start <= 25 && 25 < win.origin.start + 20;
            assert_eq!(win.label == 1, covers);
        }
        assert_eq!(w[3].step(0)[0], 3.0);
        assert_eq!(w[3].step(19)[8], 22.0);
    }

    proptest! {
        #[test]
        fn count_formula_holds(len in 0usize..300, window in 1usize..40, stride in 1usize..10) {
            let w = window_segments(&series(len, &[]), window, stride, "A", "A01");
            let expected = if len >= window { (len - window) / stride + 1 } else { 0 };
            prop_assert_eq!(w.len(), expected);
            for (k, win) in w.iter().enumerate() {
                prop_assert_eq!(win.origin.start, k * stride);
                prop_assert!(win.origin.start + window <= len);
            }
        }
    }
}
