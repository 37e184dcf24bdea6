//! Parses a raw interaction log, applies the frequency filters and shows the
//! leave-one-out split and id mapping.
//!
//! cargo run --example load_interactions -- path/to/interactions.tsv

use grasp::dataset::{load_interactions, parse_interactions, split_leave_one_out};

const SAMPLE: &str = "\
alice\tlamp\t1\nalice\tdesk\t2\nalice\tchair\t3\nalice\tlamp\t4
bob\tdesk\t1\nbob\tchair\t2\nbob\tlamp\t3
carol\tlamp\t5\ncarol\tchair\t6\ncarol\tdesk\t7\ncarol\trug\t8
dave\trug\t1
";

fn main() -> grasp::Result<()> {
    let ds = match std::env::args().nth(1) {
        Some(path) => load_interactions(path.as_ref(), 3, 3)?,
        None => parse_interactions(SAMPLE, 3, 3)?,
    };
    println!(
        "{} users, {} items, {} interactions after filtering",
        ds.user_count(),
        ds.item_count(),
        ds.interaction_count()
    );
    let split = split_leave_one_out(&ds);
    for u in split.users.iter().take(5) {
        let names = |ids: &[usize]| {
            ids.iter()
                .map(|&i| ds.item_raw_id(i).to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!(
            "{:<8} train [{}]  valid {}  test {}",
            ds.user_raw_id(u.user),
            names(&u.train_prefix),
            ds.item_raw_id(u.valid_target),
            ds.item_raw_id(u.test_target)
        );
    }
    println!("{} users too short to split", split.excluded);
    Ok(())
}
