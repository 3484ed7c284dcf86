//! Delimited text datasets with external string ids.
//!
//! Files start with a `#coldstart-<kind>\tv<N>` header line. Ids are mapped
//! to internal ids through a [`Vocabulary`] with the spaces `video`,
//! `author`, `product`, `category` and `user`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::graph::Vocabulary;
use crate::graph::{StatVector, VideoId, VideoNode};
use crate::model::UserRecord;
use crate::{Error, Result};

pub const DATA_SCHEMA_VERSION: u32 = 1;

pub const VIDEO: &str = "video";
pub const AUTHOR: &str = "author";
pub const PRODUCT: &str = "product";
pub const CATEGORY: &str = "category";
pub const USER: &str = "user";

/// One logged exposure of a target video to a user.
#[derive(Debug, Clone, PartialEq)]
pub struct Impression {
    pub id: u64,
    pub user: u64,
    /// Most recent first.
    pub behaviors: Vec<VideoId>,
    pub target: VideoId,
    pub label: bool,
    pub ts: i64,
}

fn header(kind: &str, extra: &str) -> String {
    format!("#coldstart-{kind}\tv{DATA_SCHEMA_VERSION}{extra}\n")
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Reads a file and checks its header; returns the extra header fields and
/// numbered body lines.
fn read_file(path: &Path, kind: &str) -> Result<(Vec<String>, Vec<(usize, String)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let mut cols = head.split('\t');
    let magic = format!("#coldstart-{kind}");
    if cols.next() != Some(magic.as_str()) {
        return Err(Error::parse(path, 1, format!("expected header {magic}")));
    }
    let ver = cols
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::parse(path, 1, "missing schema version"))?;
    if ver != DATA_SCHEMA_VERSION {
        return Err(Error::SchemaVersion { what: "dataset", found: ver, expected: DATA_SCHEMA_VERSION });
    }
    let extra = cols.map(str::to_string).collect();
    let body = lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i + 2, l.to_string()))
        .collect();
    Ok((extra, body))
}

fn ext<'a>(vocab: &'a Vocabulary, space: &str, id: u64) -> Result<&'a str> {
    vocab.external(space, id).ok_or_else(|| Error::Invalid(format!("no external name for {space} {id}")))
}

fn opt_ext(vocab: &Vocabulary, space: &str, id: Option<u64>) -> Result<String> {
    match id {
        Some(i) => ext(vocab, space, i).map(str::to_string),
        None => Ok("-".into()),
    }
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::parse(path, line, format!("bad {what}: {s:?}")))
}

fn list<T: ToString>(xs: &[T], sep: &str) -> String {
    if xs.is_empty() {
        "-".into()
    } else {
        xs.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
    }
}

/// `videos.tsv`: one video per line with external ids; the header carries
/// the graph build timestamp.
pub fn write_videos(path: &Path, build_ts: i64, videos: &[VideoNode], vocab: &Vocabulary) -> Result<()> {
    let mut out = header("videos", &format!("\tbuild_ts={build_ts}"));
    for v in videos {
        let s = v.stats;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            ext(vocab, VIDEO, v.video_id.0)?,
            v.release_ts,
            opt_ext(vocab, AUTHOR, v.author_id)?,
            opt_ext(vocab, PRODUCT, v.product_id)?,
            opt_ext(vocab, CATEGORY, v.category_id)?,
            list(&v.title_tokens, " "),
            s.ctr_15d,
            s.pv_cnt_15d,
            s.ipv_cnt_15d,
            s.clk_cnt_15d,
            s.avg_stay_time,
            v.content_vector.as_deref().map_or_else(|| "-".into(), |c| list(c, ",")),
        )
        .expect("string write");
    }
    write_file(path, &out)
}

/// Reads `videos.tsv`, interning external ids into `vocab` in file order.
pub fn read_videos(path: &Path, vocab: &mut Vocabulary) -> Result<(i64, Vec<VideoNode>)> {
    let (extra, body) = read_file(path, "videos")?;
    let build_ts = extra
        .iter()
        .find_map(|kv| kv.strip_prefix("build_ts="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, "missing build_ts"))?;
    let mut out = Vec::with_capacity(body.len());
    for (ln, line) in body {
        let c: Vec<&str> = line.split('\t').collect();
        if c.len() != 12 {
            return Err(Error::parse(path, ln, format!("expected 12 columns, got {}", c.len())));
        }
        let mut opt = |space: &str, s: &str| if s == "-" { None } else { Some(vocab.intern(space, s)) };
        let author_id = opt(AUTHOR, c[2]);
        let product_id = opt(PRODUCT, c[3]);
        let category_id = opt(CATEGORY, c[4]);
        let title_tokens = if c[5] == "-" {
            Vec::new()
        } else {
            c[5].split(' ').map(|t| num(path, ln, t, "token")).collect::<Result<_>>()?
        };
        let mut stats = [0.0; StatVector::LEN];
        for (i, s) in stats.iter_mut().enumerate() {
            *s = num(path, ln, c[6 + i], "statistic")?;
        }
        let content_vector = if c[11] == "-" {
            None
        } else {
            Some(c[11].split(',').map(|x| num(path, ln, x, "content")).collect::<Result<_>>()?)
        };
        out.push(VideoNode {
            video_id: VideoId(vocab.intern(VIDEO, c[0])),
            release_ts: num(path, ln, c[1], "release_ts")?,
            author_id,
            product_id,
            category_id,
            title_tokens,
            stats: StatVector::from_values(stats),
            content_vector,
        });
    }
    Ok((build_ts, out))
}

/// `users.tsv`: `user<TAB>f1,f2,...`.
pub fn write_users(path: &Path, users: &[(u64, UserRecord)], vocab: &Vocabulary) -> Result<()> {
    let mut out = header("users", "");
    for (u, r) in users {
        writeln!(out, "{}\t{}", ext(vocab, USER, *u)?, list(&r.numeric, ",")).expect("string write");
    }
    write_file(path, &out)
}

pub fn read_users(path: &Path, vocab: &mut Vocabulary) -> Result<Vec<(u64, UserRecord)>> {
    let (_, body) = read_file(path, "users")?;
    let mut out = Vec::with_capacity(body.len());
    for (ln, line) in body {
        let (name, feats) = line.split_once('\t').ok_or_else(|| Error::parse(path, ln, "expected 2 columns"))?;
        let numeric = if feats == "-" {
            Vec::new()
        } else {
            feats.split(',').map(|x| num(path, ln, x, "feature")).collect::<Result<_>>()?
        };
        out.push((vocab.intern(USER, name), UserRecord { numeric }));
    }
    Ok(out)
}

/// Impression files: `id<TAB>user<TAB>b1,b2,...<TAB>target<TAB>label<TAB>ts`.
pub fn write_impressions(path: &Path, imps: &[Impression], vocab: &Vocabulary) -> Result<()> {
    let mut out = header("impressions", "");
    for imp in imps {
        let behaviors =
            imp.behaviors.iter().map(|b| ext(vocab, VIDEO, b.0).map(str::to_string)).collect::<Result<Vec<_>>>()?;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            imp.id,
            ext(vocab, USER, imp.user)?,
            list(&behaviors, ","),
            ext(vocab, VIDEO, imp.target.0)?,
            u8::from(imp.label),
            imp.ts
        )
        .expect("string write");
    }
    write_file(path, &out)
}

/// Reads an impression file; every id must already be known to `vocab`.
pub fn read_impressions(path: &Path, vocab: &Vocabulary) -> Result<Vec<Impression>> {
    let (_, body) = read_file(path, "impressions")?;
    let mut out = Vec::with_capacity(body.len());
    for (ln, line) in body {
        let c: Vec<&str> = line.split('\t').collect();
        if c.len() != 6 {
            return Err(Error::parse(path, ln, format!("expected 6 columns, got {}", c.len())));
        }
        let lookup = |space: &str, s: &str| {
            vocab.get(space, s).ok_or_else(|| Error::parse(path, ln, format!("unknown {space} id {s:?}")))
        };
        let behaviors = if c[2] == "-" {
            Vec::new()
        } else {
            c[2].split(',').map(|b| lookup(VIDEO, b).map(VideoId)).collect::<Result<_>>()?
        };
        let label = match c[4] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(path, ln, format!("label must be 0 or 1, got {other:?}"))),
        };
        out.push(Impression {
            id: num(path, ln, c[0], "impression id")?,
            user: lookup(USER, c[1])?,
            behaviors,
            target: VideoId(lookup(VIDEO, c[3])?),
            label,
            ts: num(path, ln, c[5], "timestamp")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impressions_round_trip() {
        let mut vocab = Vocabulary::new();
        for v in ["x", "y", "z"] {
            vocab.intern(VIDEO, v);
        }
        vocab.intern(USER, "alice");
        let imps = vec![
            Impression { id: 7, user: 0, behaviors: vec![VideoId(2), VideoId(0)], target: VideoId(1), label: true, ts: 5 },
            Impression { id: 8, user: 0, behaviors: vec![], target: VideoId(2), label: false, ts: -1 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        write_impressions(&p, &imps, &vocab).unwrap();
        assert_eq!(read_impressions(&p, &vocab).unwrap(), imps);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("7\talice\tz,x\ty\t1\t5"), "{text}");
    }

    #[test]
    fn bad_rows_are_located() {
        let vocab = Vocabulary::new();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        fs::write(&p, "#coldstart-impressions\tv1\n1\tu\t-\tv\t1\t0\n").unwrap();
        assert!(matches!(read_impressions(&p, &vocab), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "#coldstart-impressions\tv9\n").unwrap();
        assert!(matches!(read_impressions(&p, &vocab), Err(Error::SchemaVersion { found: 9, .. })));
    }
}
