//! Small hand-written catalogs modelled on well-known Spider databases.
//! Used by examples, tests and the CLI smoke scripts.

use crate::catalog::{Column, ColumnRef, Database, ForeignKey, SchemaCatalog, Table, TypeTag};

fn table(name: &str, columns: &[(&str, TypeTag)], pk: &[usize]) -> Table {
    let mut t = Table::new(name, columns.iter().map(|(c, ty)| Column::new(c, *ty)).collect());
    t.primary_key = pk.iter().copied().collect();
    t
}

fn fk(from: (usize, usize), to: (usize, usize)) -> ForeignKey {
    ForeignKey {
        from: ColumnRef { table: from.0, column: from.1 },
        to: ColumnRef { table: to.0, column: to.1 },
    }
}

use TypeTag::{Number as N, Text as T};

pub fn concert_singer() -> Database {
    Database {
        id: "concert_singer".into(),
        tables: vec![
            table(
                "stadium",
                &[
                    ("Stadium_ID", N),
                    ("Location", T),
                    ("Name", T),
                    ("Capacity", N),
                    ("Highest", N),
                    ("Lowest", N),
                    ("Average", N),
                ],
                &[0],
            ),
            table(
                "singer",
                &[
                    ("Singer_ID", N),
                    ("Name", T),
                    ("Country", T),
                    ("Song_Name", T),
                    ("Song_release_year", T),
                    ("Age", N),
                    ("Is_male", TypeTag::Boolean),
                ],
                &[0],
            ),
            table(
                "concert",
                &[("concert_ID", N), ("concert_Name", T), ("Theme", T), ("Stadium_ID", T), ("Year", T)],
                &[0],
            ),
            table("singer_in_concert", &[("concert_ID", N), ("Singer_ID", T)], &[0]),
        ],
        foreign_keys: vec![fk((2, 3), (0, 0)), fk((3, 1), (1, 0)), fk((3, 0), (2, 0))],
    }
}

pub fn world() -> Database {
    Database {
        id: "world".into(),
        tables: vec![
            table("country", &[("Code", T), ("Name", T), ("Continent", T), ("Region", T)], &[0]),
            table("countrylanguage", &[("CountryCode", T), ("Language", T)], &[0, 1]),
        ],
        foreign_keys: vec![fk((1, 0), (0, 0))],
    }
}

pub fn car() -> Database {
    Database {
        id: "car".into(),
        tables: vec![
            table("continents", &[("ContId", N), ("Continent", T)], &[0]),
            table("countries", &[("CountryId", N), ("CountryName", T), ("Continent", N)], &[0]),
            table("car_makers", &[("Id", N), ("Maker", T), ("FullName", T), ("Country", T)], &[0]),
        ],
        foreign_keys: vec![fk((1, 2), (0, 0)), fk((2, 3), (1, 0))],
    }
}

pub fn geography() -> Database {
    Database {
        id: "geography".into(),
        tables: vec![
            table(
                "state",
                &[("state_name", T), ("population", N), ("area", N), ("country_name", T), ("capital", T)],
                &[0],
            ),
            table(
                "city",
                &[("city_name", T), ("population", N), ("country_name", T), ("state_name", T)],
                &[0],
            ),
            table("river", &[("river_name", T), ("length", N), ("country_name", T), ("traverse", T)], &[0]),
            table("border_info", &[("state_name", T), ("border", T)], &[0, 1]),
            table("mountain", &[("mountain_name", T), ("mountain_altitude", N), ("state_name", T)], &[0]),
        ],
        foreign_keys: vec![
            fk((1, 3), (0, 0)),
            fk((2, 3), (0, 0)),
            fk((3, 0), (0, 0)),
            fk((3, 1), (0, 0)),
            fk((4, 2), (0, 0)),
        ],
    }
}

pub fn catalog_of(dbs: Vec<Database>) -> SchemaCatalog {
    SchemaCatalog::new(dbs).expect("fixture catalogs are valid")
}

/// All four fixture databases in one catalog.
pub fn toy_catalog() -> SchemaCatalog {
    catalog_of(vec![concert_singer(), world(), car(), geography()])
}

type Domain = (&'static str, &'static [&'static str], &'static [&'static str]);

/// Domain name, entity tables, domain-specific attribute columns.
const DOMAINS: &[Domain] = &[
    ("music_festival", &["artist", "band", "album", "song", "concert", "stadium", "ticket", "sponsor", "stage", "track", "label", "fan"], &["genre", "duration", "release_year", "capacity", "price", "rating", "country", "theme"]),
    ("hospital", &["patient", "doctor", "nurse", "ward", "appointment", "prescription", "medication", "department", "room", "procedure", "insurance", "bill"], &["diagnosis", "dosage", "specialty", "admission_date", "blood_type", "salary", "phone", "floor"]),
    ("university", &["student", "professor", "course", "department", "enrollment", "classroom", "exam", "scholarship", "club", "dormitory", "library", "grade"], &["credits", "gpa", "semester", "building", "budget", "major", "score", "title"]),
    ("airline", &["flight", "airport", "airline", "pilot", "passenger", "aircraft", "booking", "crew", "route", "gate", "baggage", "lounge"], &["departure_time", "arrival_time", "distance", "model", "seat", "weight", "nationality", "price"]),
    ("retail", &["customer", "product", "order", "store", "employee", "supplier", "payment", "shipment", "category", "inventory", "coupon", "review"], &["price", "quantity", "email", "amount", "rating", "status", "discount", "address"]),
    ("geography", &["country", "city", "river", "mountain", "lake", "state", "continent", "border", "region", "capital", "ocean", "island"], &["population", "area", "length", "height", "language", "depth", "climate", "elevation"]),
    ("film", &["movie", "director", "actor", "studio", "award", "festival", "review", "screening", "cinema", "producer", "script", "critic"], &["budget", "rating", "release_year", "duration", "nationality", "income", "title", "score"]),
    ("sports_league", &["team", "player", "match", "season", "coach", "stadium", "referee", "injury", "transfer", "league", "sponsor", "trophy"], &["score", "position", "salary", "rank", "height", "weight", "capacity", "goals"]),
    ("library", &["book", "author", "publisher", "member", "loan", "branch", "librarian", "reservation", "fine", "shelf", "event", "magazine"], &["isbn", "pages", "due_date", "amount", "email", "phone", "title", "year"]),
    ("restaurant_chain", &["restaurant", "menu_item", "chef", "order", "customer", "supplier", "ingredient", "reservation", "review", "shift", "delivery", "table_seat"], &["price", "calories", "rating", "cuisine", "quantity", "tip", "status", "address"]),
    ("railway", &["train", "station", "route", "ticket", "passenger", "driver", "schedule", "carriage", "platform", "depot", "maintenance", "fare"], &["departure_time", "arrival_time", "distance", "capacity", "speed", "price", "status", "length"]),
    ("hotel_booking", &["hotel", "room", "guest", "booking", "staff", "payment", "amenity", "review", "city", "tourist", "event", "invoice"], &["price", "rating", "check_in", "check_out", "capacity", "amount", "email", "nationality"]),
    ("shipping", &["ship", "port", "cargo", "captain", "voyage", "company", "container", "crew", "customs", "route", "warehouse", "invoice"], &["tonnage", "weight", "departure_time", "value", "flag", "length", "capacity", "status"]),
    ("museum", &["museum", "artwork", "artist", "exhibition", "visitor", "ticket", "curator", "gallery", "donation", "tour", "loan", "restoration"], &["year", "price", "medium", "theme", "amount", "age", "nationality", "duration"]),
    ("automobile", &["car", "maker", "model", "dealer", "customer", "sale", "engine", "factory", "country", "warranty", "recall", "part"], &["horsepower", "price", "year", "weight", "mpg", "cylinders", "quantity", "status"]),
    ("school_district", &["school", "teacher", "student", "district", "class", "exam", "bus", "parent", "club", "course", "grade", "budget_item"], &["enrollment", "salary", "score", "age", "capacity", "year", "subject", "phone"]),
    ("election", &["candidate", "party", "election", "district", "voter", "official", "poll", "donation", "debate", "ballot", "campaign", "region"], &["votes", "percentage", "amount", "year", "age", "population", "rank", "date"]),
    ("bank", &["customer", "account", "branch", "loan", "transaction", "card", "employee", "manager", "investment", "insurance", "payment", "atm"], &["balance", "amount", "interest_rate", "credit_score", "income", "date", "status", "city"]),
    ("software_company", &["employee", "project", "department", "client", "bug", "release", "team", "repository", "meeting", "contract", "product", "office"], &["salary", "budget", "priority", "version", "deadline", "language", "status", "city"]),
    ("farm", &["farm", "crop", "animal", "farmer", "field", "harvest", "equipment", "market", "sale", "weather", "supplier", "barn"], &["yield", "acreage", "price", "weight", "quantity", "year", "season", "region"]),
];

/// Tables per database in the desk-scale catalog (106 tables in total).
const DESK_SIZES: [usize; 20] = [2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 5, 5, 6, 6, 7, 8, 8, 9, 10, 12];

const GENERIC_COLUMNS: [&str; 5] = ["name", "description", "type", "date", "status"];

/// Seeded synthetic catalog of 20 databases over shared vocabulary: table
/// names recur across databases, generic columns recur across tables, and
/// each table links to an earlier one by a foreign key.
pub fn desk_catalog(seed: u64) -> SchemaCatalog {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = DESK_SIZES;
    sizes.shuffle(&mut rng);
    let dbs = DOMAINS
        .iter()
        .zip(sizes)
        .map(|(&(id, entities, attributes), size)| {
            let mut entities = entities.to_vec();
            entities.shuffle(&mut rng);
            entities.truncate(size);
            let mut tables = Vec::with_capacity(size);
            let mut foreign_keys = Vec::new();
            for (i, entity) in entities.iter().enumerate() {
                let mut columns = vec![Column::new(&format!("{entity}_id"), N)];
                for g in GENERIC_COLUMNS.choose_multiple(&mut rng, 2) {
                    columns.push(Column::new(g, if *g == "date" { TypeTag::Time } else { T }));
                }
                let n_attr = rng.gen_range(2..=3);
                let fresh: Vec<&str> = attributes
                    .iter()
                    .copied()
                    .filter(|a| !columns.iter().any(|c| c.name == *a))
                    .collect();
                for a in fresh.choose_multiple(&mut rng, n_attr) {
                    columns.push(Column::new(a, N));
                }
                let mut parents = Vec::new();
                if i > 0 {
                    parents.push(rng.gen_range(0..i));
                    if i > 1 && rng.gen_bool(0.3) {
                        let extra = rng.gen_range(0..i);
                        if !parents.contains(&extra) {
                            parents.push(extra);
                        }
                    }
                }
                for p in parents {
                    foreign_keys.push(fk((i, columns.len()), (p, 0)));
                    columns.push(Column::new(&format!("{}_id", entities[p]), N));
                }
                let mut t = Table::new(entity, columns);
                t.primary_key.insert(0);
                tables.push(t);
            }
            Database {
                id: id.to_string(),
                tables,
                foreign_keys,
            }
        })
        .collect();
    catalog_of(dbs)
}

/// Names for randomized catalogs; compounds share pieces with simple words
/// so tokenization and trie prefixes get exercised.
const RANDOM_NAMES: [&str; 24] = [
    "singer", "singer_in_concert", "concert", "stadium", "car", "car_makers", "car_names", "model_list", "state",
    "statement", "river", "city", "country", "country_language", "border_info", "lake", "mountain", "highlow",
    "team", "player", "player_team", "match", "match_season", "season",
];

/// Seeded catalog of `databases` databases with a size drawn from
/// `tables` each, names from a shared pool, and random foreign keys
/// (possibly none, so disconnected tables occur).
pub fn random_catalog<R: rand::Rng + ?Sized>(
    rng: &mut R,
    databases: std::ops::RangeInclusive<usize>,
    tables: std::ops::RangeInclusive<usize>,
) -> SchemaCatalog {
    use rand::seq::SliceRandom;

    let n_db = rng.gen_range(databases);
    let dbs = (0..n_db)
        .map(|d| {
            let n = rng.gen_range(tables.clone());
            let names: Vec<&str> = RANDOM_NAMES.choose_multiple(rng, n).copied().collect();
            let density = rng.gen_range(0.0..0.6);
            let mut tables: Vec<Table> = names
                .iter()
                .map(|name| {
                    let mut t = Table::new(name, vec![Column::new("id", N), Column::new("name", T)]);
                    t.primary_key.insert(0);
                    t
                })
                .collect();
            let mut foreign_keys = Vec::new();
            for i in 1..n {
                for j in 0..i {
                    if rng.gen_bool(density) {
                        let col = tables[i].columns.len();
                        tables[i].columns.push(Column::new(&format!("ref_{j}"), N));
                        foreign_keys.push(fk((i, col), (j, 0)));
                    }
                }
            }
            Database {
                id: format!("{}_{d}", ["alpha", "beta", "gamma", "concert_singer"][d % 4]),
                tables,
                foreign_keys,
            }
        })
        .collect();
    catalog_of(dbs)
}
