//! SQL metadata extraction properties.

use dbroute::sqlparse::extract_metadata;
use proptest::prelude::*;

const TABLES: [&str; 5] = ["singer", "concert", "stadium", "singer_in_concert", "river"];

fn nested(depth: usize) -> String {
    let mut sql = format!("SELECT name FROM {}", TABLES[0]);
    for d in 1..=depth {
        sql = format!("SELECT name FROM {} WHERE id IN ({sql})", TABLES[d % TABLES.len()]);
    }
    sql
}

proptest! {
    #[test]
    fn nesting_collects_every_level(depth in 0usize..12) {
        let m = extract_metadata(&nested(depth));
        prop_assert!(m.parse_ok);
        let expected: std::collections::BTreeSet<String> =
            (0..=depth).map(|d| TABLES[d % TABLES.len()].to_string()).collect();
        prop_assert_eq!(m.tables, expected);
    }

    #[test]
    fn aliases_do_not_change_tables(a in "[a-z]{1,3}[0-9]", b in "[a-z]{1,3}[0-9]") {
        prop_assume!(a != b);
        let plain = extract_metadata("SELECT singer.name FROM singer JOIN concert ON singer.id = concert.singer_id");
        let aliased = extract_metadata(&format!(
            "SELECT {a}.name FROM singer AS {a} JOIN concert {b} ON {a}.id = {b}.singer_id"
        ));
        prop_assert_eq!(&plain.tables, &aliased.tables);
        prop_assert_eq!(&plain.columns, &aliased.columns);
    }

    #[test]
    fn keyword_and_identifier_case_is_ignored(mask in prop::collection::vec(any::<bool>(), 64)) {
        let sql = "select t1.name from singer as t1 join concert as t2 on t1.singer_id = t2.singer_id where t2.year > 2014";
        let flipped: String = sql
            .chars()
            .zip(mask.iter().cycle())
            .map(|(c, up)| if *up { c.to_ascii_uppercase() } else { c })
            .collect();
        prop_assert_eq!(extract_metadata(sql), extract_metadata(&flipped));
    }
}
