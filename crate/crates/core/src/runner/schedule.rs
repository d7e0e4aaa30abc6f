/// Roughly geometric evaluation steps from 1 to `total_steps`.
///
/// Point `i` sits at `10^(i / points_per_decade)`, bumped forward where
/// rounding would repeat a step, so the list is strictly increasing and
/// always starts at 1 and ends at `total_steps`.
pub fn eval_schedule(total_steps: u64, points_per_decade: u32) -> Vec<u64> {
    let total_steps = total_steps.max(1);
    let ppd = points_per_decade.max(1) as f64;
    let mut steps = vec![1u64];
    let mut i = 1u32;
    loop {
        let target = 10f64.powf(i as f64 / ppd).round() as u64;
        let next = target.max(steps[steps.len() - 1] + 1);
        if next >= total_steps {
            break;
        }
        steps.push(next);
        i += 1;
    }
    if steps[steps.len() - 1] != total_steps {
        steps.push(total_steps);
    }
    steps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_steps_ten_per_decade() {
        let s = eval_schedule(100, 10);
        assert!((18..=22).contains(&s.len()), "{s:?}");
        assert_eq!(s[0], 1);
        assert_eq!(*s.last().unwrap(), 100);
    }

    #[test]
    fn full_length_schedule_count() {
        let s = eval_schedule(100_000, 30);
        // 5 decades at 30 points each, plus the leading 1.
        assert_eq!(s.len(), 151);
    }

    #[test]
    fn strictly_increasing() {
        for total in [1, 2, 10, 37, 500, 30_000] {
            let s = eval_schedule(total, 30);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(s[0], 1);
            assert_eq!(*s.last().unwrap(), total);
        }
    }
}
