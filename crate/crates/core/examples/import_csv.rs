//! Import long-format CSV, rescaling locations and truncating ragged subjects.

use covfield::datafile::{import_long_csv, write_dataset, ImportOptions};

const CSV: &str = "\
id,day,value
a,10,1.2
a,20,0.7
a,40,-0.3
b,15,0.4
b,35,0.9
c,12,-1.1
c,30,0.2
c,38,0.5
";

fn main() -> covfield::error::Result<()> {
    let mut opts = ImportOptions {
        subject_column: "id".into(),
        location_columns: vec!["day".into()],
        value_column: "value".into(),
        rescale: true,
        subsample_to_min: false,
    };
    match import_long_csv(CSV, &opts) {
        Ok(_) => println!("unexpected success"),
        Err(e) => println!("strict import: {e}"),
    }
    opts.subsample_to_min = true;
    let outcome = import_long_csv(CSV, &opts)?;
    println!("truncated subjects: {:?}", outcome.truncated);
    print!("{}", write_dataset(&outcome.header, &outcome.data));
    Ok(())
}
