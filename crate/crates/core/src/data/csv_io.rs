use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{Bag, MilDataset};
use crate::error::{Error, Result};

/// Load a `bag_id,label,f1,...,fm` CSV file.
///
/// Rows sharing a `bag_id` form one bag; bags appear in first-appearance order.
pub fn load_mil_csv(path: impl AsRef<Path>) -> Result<MilDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_mil_csv(file, path)
}

/// Parse MIL CSV from any reader. `source` is only used in error messages.
pub fn read_mil_csv<R: Read>(reader: R, source: &Path) -> Result<MilDataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(source),
        line,
        message,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "bag_id" || &header[1] != "label" {
        return Err(parse_err(
            1,
            "expected header `bag_id,label,f1,...,fm` with at least one feature".into(),
        ));
    }
    let m = header.len() - 2;

    let mut bags: Vec<Bag> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != m + 2 {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", m + 2, record.len()),
            ));
        }
        let bag_id = record[0].to_string();
        let label = match &record[1] {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(parse_err(line, format!("label `{other}` is not 0 or 1"))),
        };
        let features = record
            .iter()
            .skip(2)
            .enumerate()
            .map(|(j, field)| {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(line, format!("feature f{} `{field}` is not a number", j + 1)))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(line, format!("feature f{} is not finite", j + 1)))
                }
            })
            .collect::<Result<Vec<f64>>>()?;

        match index.get(&bag_id) {
            Some(&bi) => {
                let bag = &mut bags[bi];
                if bag.label != label {
                    return Err(Error::InconsistentLabel {
                        bag_id,
                        first: bag.label,
                        second: label,
                        line,
                    });
                }
                bag.instances.push(features);
            }
            None => {
                index.insert(bag_id.clone(), bags.len());
                bags.push(Bag {
                    id: bag_id,
                    instances: vec![features],
                    label,
                });
            }
        }
    }

    MilDataset::new(bags, m)
}

/// Write a dataset in the same layout [`load_mil_csv`] reads.
pub fn write_mil_csv<W: Write>(dataset: &MilDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["bag_id".to_string(), "label".to_string()];
    header.extend((1..=dataset.feature_count).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_io_error)?;
    for bag in &dataset.bags {
        for x in &bag.instances {
            let mut row = Vec::with_capacity(x.len() + 2);
            row.push(bag.id.clone());
            row.push(bag.label.to_string());
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_io_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
