//! File formats: headerless CSV matrices, partition label files, and
//! empirical posterior files. Floats are written with the shortest
//! representation that round-trips, so write → read is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::posterior::EmpiricalPartitionPosterior;

/// Reads a headerless CSV of reals into an `n x p` matrix.
pub fn read_matrix_f64(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv_reader(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let row: Vec<f64> = record
            .iter()
            .map(|field| {
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, line, format!("not a number: `{field}`")))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected {} fields, got {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    matrix_from_rows(path, rows)
}

/// Reads a headerless CSV of nonnegative integer counts.
pub fn read_matrix_u64(path: &Path) -> Result<Array2<u64>> {
    let real = read_matrix_f64(path)?;
    let mut counts = Array2::<u64>::zeros(real.dim());
    for ((i, j), &v) in real.indexed_iter() {
        if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("count data needs nonnegative integers, got {v} in column {j}"),
            ));
        }
        counts[(i, j)] = v as u64;
    }
    Ok(counts)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn matrix_from_rows(path: &Path, rows: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "empty matrix"));
    }
    let p = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((flat.len() / p, p), flat)
        .map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Writes a matrix as headerless CSV.
pub fn write_matrix_f64(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut out = writer(path)?;
    for row in matrix.rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", fields.join(",")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_matrix_u64(path: &Path, matrix: &Array2<u64>) -> Result<()> {
    let mut out = writer(path)?;
    for row in matrix.rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", fields.join(",")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Reads partitions, one per line, as comma-separated labels. Labels are
/// canonicalized on read, so any labeling convention is accepted.
pub fn read_partitions(path: &Path) -> Result<Vec<Partition>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut partitions = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        partitions.push(parse_labels(&line, path, lineno)?);
    }
    if partitions.is_empty() {
        return Err(Error::parse(path, 0, "no partitions in file"));
    }
    Ok(partitions)
}

pub fn write_partitions(path: &Path, partitions: &[Partition]) -> Result<()> {
    let mut out = writer(path)?;
    for partition in partitions {
        writeln!(out, "{}", format_labels(partition)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn parse_labels(text: &str, path: &Path, line: usize) -> Result<Partition> {
    let labels: Vec<u32> = text
        .trim()
        .split(',')
        .map(|field| {
            field
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::parse(path, line, format!("not a cluster label: `{field}`")))
        })
        .collect::<Result<_>>()?;
    Partition::from_labels(&labels).map_err(|e| Error::parse(path, line, e.to_string()))
}

fn format_labels(partition: &Partition) -> String {
    partition
        .labels()
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Reads an empirical posterior: a `n=<items>` header line, then one
/// `<weight>;<labels>` line per atom. Weights may be unnormalized; duplicate
/// atoms pool their weight.
pub fn read_posterior(path: &Path) -> Result<EmpiricalPartitionPosterior> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let n = loop {
        let (idx, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "empty posterior file"))?;
        let header = header.map_err(|e| Error::io(path, e))?;
        let header = header.trim();
        if header.is_empty() {
            continue;
        }
        let n = header
            .strip_prefix("n=")
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| {
                Error::parse(path, idx + 1, format!("expected `n=<items>`, got `{header}`"))
            })?;
        break n;
    };

    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (weight_text, labels_text) = trimmed.split_once(';').ok_or_else(|| {
            Error::parse(path, lineno, "expected `<weight>;<labels>`".to_string())
        })?;
        let weight: f64 = weight_text.trim().parse().map_err(|_| {
            Error::parse(path, lineno, format!("not a weight: `{weight_text}`"))
        })?;
        let atom = parse_labels(labels_text, path, lineno)?;
        if atom.n() != n {
            return Err(Error::parse(
                path,
                lineno,
                format!("atom covers {} items, header says {n}", atom.n()),
            ));
        }
        atoms.push(atom);
        weights.push(weight);
    }
    EmpiricalPartitionPosterior::from_weighted_atoms(&atoms, &weights)
        .map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn write_posterior(path: &Path, posterior: &EmpiricalPartitionPosterior) -> Result<()> {
    let mut out = writer(path)?;
    writeln!(out, "n={}", posterior.n()).map_err(|e| Error::io(path, e))?;
    for (atom, weight) in posterior.iter() {
        writeln!(out, "{};{}", weight, format_labels(atom)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// SHA-256 of a file's bytes, hex-encoded.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn matrix_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let matrix = ndarray::array![[1.5, -2.25], [0.1, 3e-17]];
        write_matrix_f64(&path, &matrix).unwrap();
        let back = read_matrix_f64(&path).unwrap();
        assert_eq!(back, matrix);
    }

    #[test]
    fn count_matrix_rejects_fractions_and_negatives() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1,2\n3,4\n").unwrap();
        let counts = read_matrix_u64(&path).unwrap();
        assert_eq!(counts[(1, 1)], 4);

        std::fs::write(&path, "1,2\n3,4.5\n").unwrap();
        let err = read_matrix_u64(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));

        std::fs::write(&path, "1,-2\n").unwrap();
        assert!(read_matrix_u64(&path).is_err());
    }

    #[test]
    fn ragged_rows_rejected_with_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        let err = read_matrix_f64(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn partitions_round_trip_canonicalized() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("z.txt");
        std::fs::write(&path, "5,5,2\n0,1,0\n\n").unwrap();
        let partitions = read_partitions(&path).unwrap();
        assert_eq!(partitions.len(), 2);
        assert_eq!(partitions[0].labels(), &[0, 0, 1]);

        write_partitions(&path, &partitions).unwrap();
        let back = read_partitions(&path).unwrap();
        assert_eq!(back, partitions);
    }

    #[test]
    fn posterior_round_trip_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.txt");
        let atoms = vec![
            Partition::from_labels(&[0, 0, 1]).unwrap(),
            Partition::from_labels(&[0, 1, 2]).unwrap(),
        ];
        let posterior =
            EmpiricalPartitionPosterior::from_weighted_atoms(&atoms, &[2.0, 1.0]).unwrap();
        write_posterior(&path, &posterior).unwrap();
        let back = read_posterior(&path).unwrap();
        assert_eq!(back.support(), posterior.support());
        assert_eq!(back.weights(), posterior.weights());

        write_posterior(&path, &back).unwrap();
        let twice = read_posterior(&path).unwrap();
        assert_eq!(twice.weights(), back.weights());
    }

    #[test]
    fn posterior_accepts_unnormalized_and_pools_duplicates() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.txt");
        std::fs::write(&path, "n=2\n3;0,0\n1;0,1\n1;1,1\n").unwrap();
        let posterior = read_posterior(&path).unwrap();
        assert_eq!(posterior.len(), 2);
        assert!((posterior.weights()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn posterior_errors_name_the_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.txt");
        std::fs::write(&path, "n=2\n0.5;0,0\nbroken\n").unwrap();
        let err = read_posterior(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        std::fs::write(&path, "n=3\n0.5;0,0\n").unwrap();
        assert!(read_posterior(&path).is_err());

        std::fs::write(&path, "items 3\n").unwrap();
        assert!(read_posterior(&path).is_err());
    }

    #[test]
    fn sha256_matches_known_value() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.txt");
        std::fs::write(&path, "abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
