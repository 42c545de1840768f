use printseg::jobstats::{failure_rate, load_jobs, runtime_histogram, word_frequency, PrintJob};
use proptest::prelude::*;

fn job() -> impl Strategy<Value = PrintJob> {
    ("[A-Za-z0-9_ .-]{0,24}", 0.0f64..20000.0, prop::bool::ANY).prop_map(|(filename, duration_s, canceled)| PrintJob {
        filename,
        duration_s,
        canceled,
    })
}

proptest! {
    #[test]
    fn rate_counts_are_ordered(jobs in prop::collection::vec(job(), 0..200), min in 0.0f64..10000.0) {
        let r = failure_rate(&jobs, min);
        prop_assert!(r.canceled <= r.total && r.total <= jobs.len());
        prop_assert_eq!(r.total + r.excluded, jobs.len());
        prop_assert_eq!(r.rate.is_none(), r.total == 0);
    }

    #[test]
    fn histogram_partitions_jobs(
        jobs in prop::collection::vec(job(), 0..200),
        mut edges in prop::collection::btree_set(0u32..20000, 2..10),
    ) {
        let edges: Vec<f64> = std::mem::take(&mut edges).into_iter().map(f64::from).collect();
        let h = runtime_histogram(&jobs, &edges).unwrap();
        prop_assert_eq!(h.total(), jobs.len());
        let canceled: usize = h.bins.iter().map(|b| b.canceled).sum::<usize>() + h.underflow.canceled + h.overflow.canceled;
        prop_assert_eq!(canceled, jobs.iter().filter(|j| j.canceled).count());
    }

    #[test]
    fn word_counts_ignore_order(names in prop::collection::vec("[A-Za-z0-9_ .-]{0,24}", 0..30)) {
        let mut rev = names.clone();
        rev.reverse();
        prop_assert_eq!(word_frequency(&names, 25), word_frequency(&rev, 25));
        for w in word_frequency(&names, 25) {
            prop_assert!(w.token.chars().count() >= 3);
            prop_assert!(w.token.chars().any(|c| !c.is_numeric()));
            prop_assert_eq!(w.token.to_lowercase(), w.token.clone());
        }
    }

    #[test]
    fn csv_round_trip(jobs in prop::collection::vec(job(), 0..50)) {
        let mut text = String::from("canceled,filename,duration_s,extra\n");
        for j in &jobs {
            text += &format!("{},\"{}\",{},x\n", j.canceled, j.filename, j.duration_s);
        }
        let log = load_jobs(text.as_bytes()).unwrap();
        prop_assert!(log.errors.is_empty());
        let trimmed: Vec<PrintJob> = jobs
            .iter()
            .map(|j| PrintJob { filename: j.filename.trim().to_string(), ..j.clone() })
            .collect();
        prop_assert_eq!(log.jobs, trimmed);
    }
}
