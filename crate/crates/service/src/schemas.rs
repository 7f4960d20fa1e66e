//! Published JSON schemas for every response body.

pub const INSTANCES: &str = include_str!("../schemas/instances.schema.json");
pub const CLASSIFICATION: &str = include_str!("../schemas/classification.schema.json");
pub const JOB: &str = include_str!("../schemas/job.schema.json");
pub const EXPLANATION: &str = include_str!("../schemas/explanation.schema.json");
pub const ATLAS: &str = include_str!("../schemas/atlas.schema.json");
pub const ERROR: &str = include_str!("../schemas/error.schema.json");

/// `(name, schema)` for every schema.
pub const ALL: [(&str, &str); 6] = [
    ("instances", INSTANCES),
    ("classification", CLASSIFICATION),
    ("job", JOB),
    ("explanation", EXPLANATION),
    ("atlas", ATLAS),
    ("error", ERROR),
];
