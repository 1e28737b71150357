//! On-disk formats: corpus manifests, codebooks, unit files, decode records
//! and WAV output.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use s2ut_core::corpus::{Corpus, CorpusConfig, Split};
use s2ut_core::decode::DecodeRecord;
use s2ut_core::tensor::Mat;
use s2ut_core::units::{Codebook, ReducedUnits, UnitSequence};

use crate::error::{format_err, io_err, Error, Result};

pub(crate) fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn ids(text: &str) -> std::result::Result<Vec<usize>, String> {
    text.split_whitespace().map(|t| t.parse::<usize>().map_err(|e| format!("bad id {t:?}: {e}"))).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    split: String,
    config: CorpusConfig,
}

/// Sidecar holding the render configuration of a manifest.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `id<TAB>source ids<TAB>target ids` lines plus the JSON sidecar.
pub fn save_manifest(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (id, src, tgt) in corpus.records() {
        text.push_str(&format!("{id}\t{}\t{}\n", join(&src), join(&tgt)));
    }
    write(path, &text)?;
    let side = Sidecar { split: corpus.split.name().to_string(), config: corpus.config.clone() };
    let json = serde_json::to_string_pretty(&side).map_err(|e| Error::Data(e.to_string()))?;
    write(&sidecar_path(path), &json)
}

/// Reads a manifest and re-renders its frames from the sidecar config.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let side_path = sidecar_path(path);
    let side: Sidecar = serde_json::from_str(&read(&side_path)?).map_err(|e| format_err(&side_path, e.line(), e.to_string()))?;
    let split = Split::parse(&side.split).ok_or_else(|| format_err(&side_path, 1, format!("unknown split {:?}", side.split)))?;
    let text = read(path)?;
    if text.trim().is_empty() {
        return Err(format_err(path, 1, "empty manifest"));
    }
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(format_err(path, n + 1, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(format_err(path, n + 1, "empty id"));
        }
        if !seen.insert(id.clone()) {
            return Err(format_err(path, n + 1, format!("duplicate id {id}")));
        }
        let src = ids(fields[1]).map_err(|m| format_err(path, n + 1, m))?;
        let tgt = ids(fields[2]).map_err(|m| format_err(path, n + 1, m))?;
        records.push((id, src, tgt));
    }
    Ok(Corpus::from_records(side.config, split, records)?)
}

/// Header `K D seed iterations`, an `inertia` history line, then K rows.
pub fn save_codebook(codebook: &Codebook, path: &Path) -> Result<()> {
    let mut text = format!("{} {} {} {}\n", codebook.k(), codebook.dim(), codebook.seed, codebook.iterations);
    let hist: Vec<String> = codebook.inertia_history.iter().map(|v| format!("{v:?}")).collect();
    text.push_str(&format!("inertia {}\n", hist.join(" ")));
    for row in codebook.centroids.rows_iter() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&vals.join(" "));
        text.push('\n');
    }
    write(path, &text)
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    let text = read(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    if header.len() != 4 {
        return Err(format_err(path, 1, "header must be `K D seed iterations`"));
    }
    let num = |s: &str| s.parse::<u64>().map_err(|e| format_err(path, 1, e.to_string()));
    let (k, d, seed, iterations) = (num(header[0])? as usize, num(header[1])? as usize, num(header[2])?, num(header[3])? as usize);
    let floats = |line: &str, n: usize| -> Result<Vec<f64>> {
        line.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| format_err(path, n, format!("{t:?}: {e}")))).collect()
    };
    let inertia_line = lines.next().unwrap_or("");
    let inertia_history = match inertia_line.strip_prefix("inertia") {
        Some(rest) => floats(rest, 2)?,
        None => return Err(format_err(path, 2, "missing inertia line")),
    };
    let mut data = Vec::with_capacity(k * d);
    for i in 0..k {
        let line = lines.next().ok_or_else(|| format_err(path, i + 3, format!("expected {k} centroid rows")))?;
        let row = floats(line, i + 3)?;
        if row.len() != d {
            return Err(format_err(path, i + 3, format!("expected {d} values, found {}", row.len())));
        }
        data.extend(row);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(format_err(path, k + 3, "trailing data after centroids"));
    }
    Ok(Codebook { centroids: Mat::from_vec(k, d, data), seed, iterations, inertia_history })
}

/// One utterance per line, space-separated unit ids.
pub fn save_units(seqs: &[UnitSequence], path: &Path) -> Result<()> {
    let text: String = seqs.iter().map(|s| format!("{}\n", join(&s.0))).collect();
    write(path, &text)
}

pub fn load_units(path: &Path) -> Result<Vec<UnitSequence>> {
    read(path)?
        .lines()
        .enumerate()
        .map(|(n, l)| {
            let u = ids(l).map_err(|m| format_err(path, n + 1, m))?;
            if u.is_empty() {
                return Err(format_err(path, n + 1, "empty unit sequence"));
            }
            Ok(UnitSequence(u))
        })
        .collect()
}

/// One utterance per line of `unit:duration` pairs.
pub fn save_reduced(seqs: &[ReducedUnits], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in seqs {
        let pairs: Vec<String> = r.units.iter().zip(&r.durations).map(|(u, d)| format!("{u}:{d}")).collect();
        text.push_str(&pairs.join(" "));
        text.push('\n');
    }
    write(path, &text)
}

pub fn load_reduced(path: &Path) -> Result<Vec<ReducedUnits>> {
    read(path)?
        .lines()
        .enumerate()
        .map(|(n, l)| {
            let (mut units, mut durations) = (Vec::new(), Vec::new());
            for pair in l.split_whitespace() {
                let (u, d) = pair.split_once(':').ok_or_else(|| format_err(path, n + 1, format!("expected unit:duration, got {pair:?}")))?;
                units.push(u.parse().map_err(|_| format_err(path, n + 1, format!("bad unit {u:?}")))?);
                durations.push(d.parse().map_err(|_| format_err(path, n + 1, format!("bad duration {d:?}")))?);
            }
            ReducedUnits::new(units, durations).map_err(|e| format_err(path, n + 1, e.to_string()))
        })
        .collect()
}

/// JSON lines.
pub fn save_decode(records: &[DecodeRecord], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
        text.push('\n');
    }
    write(path, &text)
}

pub fn load_decode(path: &Path) -> Result<Vec<DecodeRecord>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| format_err(path, n + 1, e.to_string())))
        .collect()
}

/// Mono 16-bit PCM.
pub fn write_wav(samples: &[f64], sample_rate: u32, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let wav_err = |e: hound::Error| Error::Data(format!("{}: {e}", path.display()));
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = hound::WavWriter::new(BufWriter::new(file), spec).map_err(wav_err)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let wav_err = |e: hound::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut r = hound::WavReader::open(path).map_err(wav_err)?;
    let rate = r.spec().sample_rate;
    let samples = r.samples::<i16>().map(|s| s.map(|v| v as f64 / i16::MAX as f64)).collect::<std::result::Result<_, _>>().map_err(wav_err)?;
    Ok((samples, rate))
}

/// Appends one line to a tab-separated log.
pub(crate) fn append_line(w: &mut impl Write, path: &Path, line: &str) -> Result<()> {
    writeln!(w, "{line}").map_err(io_err(path))
}
