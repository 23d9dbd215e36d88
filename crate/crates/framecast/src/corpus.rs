//! Corpus directories on disk.
//!
//! ```text
//! <root>/<action>/<actor>/<video_id>/frame_000000.png
//! <root>/segments.tsv   video_id actor action start_frame end_frame fps
//! <root>/videos.tsv     video_id actor action fps frames
//! ```
//!
//! Frames are 8-bit grayscale PNGs. `segments.tsv` end frames are inclusive.
//! `videos.tsv` is optional on read; without it the video list comes from
//! the segments and each directory's frame files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use framecast_core::data::{preprocess_frame, ActionLabel, ActionSegment, Video, VideoCorpus, DEFAULT_FPS};
use framecast_core::Frame;
use image::{GrayImage, ImageReader};

use crate::error::{Error, IoContext, Result};

pub const SEGMENTS_FILE: &str = "segments.tsv";
pub const VIDEOS_FILE: &str = "videos.tsv";
const SEGMENTS_HEADER: &str = "video_id\tactor\taction\tstart_frame\tend_frame\tfps";
const VIDEOS_HEADER: &str = "video_id\tactor\taction\tfps\tframes";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

pub fn video_dir(root: &Path, video: &Video) -> PathBuf {
    root.join(video.action.as_str()).join(&video.actor_id).join(&video.video_id)
}

/// Reads any image file as grayscale, mapping 0..=255 onto [0, 1].
pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = ImageReader::open(path)
        .at(path)?
        .with_guessed_format()
        .at(path)?
        .decode()
        .map_err(|source| Error::Image { path: path.into(), source })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Frame::from_u8(h as usize, w as usize, img.as_raw())?)
}

/// Writes an 8-bit grayscale PNG with intensities `round(255 x)`.
pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let img = GrayImage::from_raw(frame.width() as u32, frame.height() as u32, frame.to_u8())
        .expect("buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.into(), source })
}

/// Refuses a non-empty `dir` unless `force`, in which case it is cleared.
/// Creates the directory if absent.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir).at(dir)?.next().is_some();
        if occupied {
            if !force {
                return Err(Error::Exists(dir.into()));
            }
            fs::remove_dir_all(dir).at(dir)?;
        }
    }
    fs::create_dir_all(dir).at(dir)
}

/// Writes frames and both tables under an existing `root`.
pub fn write_corpus(root: &Path, corpus: &VideoCorpus, segments: &[ActionSegment]) -> Result<()> {
    let mut videos = String::from(VIDEOS_HEADER);
    videos.push('\n');
    for video in corpus.videos() {
        let dir = video_dir(root, video);
        fs::create_dir_all(&dir).at(&dir)?;
        for (i, frame) in video.frames.iter().enumerate() {
            write_frame(&dir.join(frame_file_name(i)), frame)?;
        }
        videos.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            video.video_id,
            video.actor_id,
            video.action,
            video.fps,
            video.frames.len()
        ));
    }
    let mut table = String::from(SEGMENTS_HEADER);
    table.push('\n');
    for s in segments {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            s.video_id, s.actor_id, s.action, s.start_frame, s.end_frame, s.fps
        ));
    }
    let path = root.join(VIDEOS_FILE);
    fs::write(&path, videos).at(&path)?;
    let path = root.join(SEGMENTS_FILE);
    fs::write(&path, table).at(path)
}

/// Data rows of a tab-separated table with the expected header, as
/// `(line number, fields)`.
fn table_rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == header => {}
        _ => return Err(Error::format(path, format!("line 1: expected header `{header}`"))),
    }
    let columns = header.split('\t').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(|f| f.trim().to_string()).collect();
        if fields.len() != columns {
            return Err(Error::format(path, format!("line {}: expected {columns} fields, found {}", i + 1, fields.len())));
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::format(path, format!("line {line}: field {name} `{value}`: {e}")))
}

pub fn read_segments(root: &Path) -> Result<Vec<ActionSegment>> {
    let path = root.join(SEGMENTS_FILE);
    table_rows(&path, SEGMENTS_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let segment = ActionSegment {
                video_id: f[0].clone(),
                actor_id: f[1].clone(),
                action: parse_field(&path, line, "action", &f[2])?,
                start_frame: parse_field(&path, line, "start_frame", &f[3])?,
                end_frame: parse_field(&path, line, "end_frame", &f[4])?,
                fps: parse_field(&path, line, "fps", &f[5])?,
            };
            segment.validate().map_err(|e| Error::format(&path, format!("line {line}: {e}")))?;
            Ok(segment)
        })
        .collect()
}

struct VideoEntry {
    actor_id: String,
    action: ActionLabel,
    fps: f64,
    frames: Option<usize>,
}

/// Loads every frame of every listed video.
pub fn read_corpus(root: &Path) -> Result<(VideoCorpus, Vec<ActionSegment>)> {
    let segments = read_segments(root)?;
    let mut entries: BTreeMap<String, VideoEntry> = BTreeMap::new();
    let videos_path = root.join(VIDEOS_FILE);
    if videos_path.exists() {
        for (line, f) in table_rows(&videos_path, VIDEOS_HEADER)? {
            entries.insert(
                f[0].clone(),
                VideoEntry {
                    actor_id: f[1].clone(),
                    action: parse_field(&videos_path, line, "action", &f[2])?,
                    fps: parse_field(&videos_path, line, "fps", &f[3])?,
                    frames: Some(parse_field(&videos_path, line, "frames", &f[4])?),
                },
            );
        }
    }
    for s in &segments {
        entries.entry(s.video_id.clone()).or_insert_with(|| VideoEntry {
            actor_id: s.actor_id.clone(),
            action: s.action,
            fps: s.fps,
            frames: None,
        });
    }

    let mut corpus = VideoCorpus::new();
    for (video_id, entry) in entries {
        let mut video = Video { video_id, actor_id: entry.actor_id, action: entry.action, fps: entry.fps, frames: Vec::new() };
        let dir = video_dir(root, &video);
        let count = match entry.frames {
            Some(n) => n,
            None => count_frames(&dir)?,
        };
        for i in 0..count {
            video.frames.push(read_frame(&dir.join(frame_file_name(i)))?);
        }
        corpus.insert(video)?;
    }
    Ok((corpus, segments))
}

/// Length of the contiguous `frame_000000.png, frame_000001.png, ..` run.
fn count_frames(dir: &Path) -> Result<usize> {
    if !dir.is_dir() {
        return Err(Error::format(dir, "video directory is missing"));
    }
    let mut n = 0;
    while dir.join(frame_file_name(n)).exists() {
        n += 1;
    }
    Ok(n)
}

/// One line of a sequence listing: `person01_boxing_d1  frames  1-95, 96-185`.
/// Ranges are 1-based and inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEntry {
    pub video_id: String,
    pub actor_id: String,
    pub action: ActionLabel,
    /// 0-based inclusive frame ranges.
    pub ranges: Vec<(usize, usize)>,
}

pub fn parse_sequences(text: &str, origin: &Path) -> Result<Vec<SequenceEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || !line.contains("frames") {
            continue;
        }
        let bad = |m: String| Error::format(origin, format!("line {}: {m}", i + 1));
        let (video_id, rest) = line.split_once(char::is_whitespace).ok_or_else(|| bad("missing frame ranges".into()))?;
        let rest = rest.trim().strip_prefix("frames").ok_or_else(|| bad("expected `frames`".into()))?;
        let mut parts = video_id.split('_');
        let actor_id = parts.next().unwrap_or_default().to_string();
        let action: ActionLabel = parts
            .next()
            .ok_or_else(|| bad(format!("video id `{video_id}` has no action")))?
            .parse()
            .map_err(|e| bad(format!("{e}")))?;
        let mut ranges = Vec::new();
        for range in rest.split(',').map(str::trim).filter(|r| !r.is_empty()) {
            let (a, b) = range.split_once('-').ok_or_else(|| bad(format!("range `{range}`")))?;
            let a: usize = a.trim().parse().map_err(|_| bad(format!("range `{range}`")))?;
            let b: usize = b.trim().parse().map_err(|_| bad(format!("range `{range}`")))?;
            if a == 0 || b <= a {
                return Err(bad(format!("range `{range}` must satisfy 1 <= start < end")));
            }
            ranges.push((a - 1, b - 1));
        }
        out.push(SequenceEntry { video_id: video_id.to_string(), actor_id, action, ranges });
    }
    Ok(out)
}

/// Reads raw 160x120 frames from `<frames_root>/<video_id>/` (sorted by file
/// name), crops them, and keeps only the listed videos and segments.
pub fn ingest(frames_root: &Path, sequences: &[SequenceEntry], fps: Option<f64>) -> Result<(VideoCorpus, Vec<ActionSegment>)> {
    let fps = fps.unwrap_or(DEFAULT_FPS);
    let mut corpus = VideoCorpus::new();
    let mut segments = Vec::new();
    for entry in sequences {
        let dir = frames_root.join(&entry.video_id);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .at(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .at(&dir)?;
        files.retain(|p| p.is_file());
        files.sort();
        let frames = files
            .iter()
            .map(|p| {
                preprocess_frame(&read_frame(p)?).map_err(|e| Error::format(p, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        for &(start, end) in &entry.ranges {
            if end >= frames.len() {
                return Err(Error::format(
                    &dir,
                    format!("segment {}-{} exceeds the {} frames found", start + 1, end + 1, frames.len()),
                ));
            }
            segments.push(ActionSegment {
                video_id: entry.video_id.clone(),
                actor_id: entry.actor_id.clone(),
                action: entry.action,
                start_frame: start,
                end_frame: end,
                fps,
            });
        }
        corpus.insert(Video {
            video_id: entry.video_id.clone(),
            actor_id: entry.actor_id.clone(),
            action: entry.action,
            fps,
            frames,
        })?;
    }
    Ok((corpus, segments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use framecast_core::data::synthetic::{Motion, SyntheticCorpusSpec};

    #[test]
    fn sequence_listing() {
        let text = "training: person11, person12\n\nperson01_boxing_d1\t\tframes\t1-95, 96-185, 186-245\n\
                    person02_handwaving_d4 frames 2-10\n";
        let entries = parse_sequences(text, Path::new("seq")).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].actor_id, "person01");
        assert_eq!(entries[0].action, ActionLabel::Boxing);
        assert_eq!(entries[0].ranges, [(0, 94), (95, 184), (185, 244)]);
        assert_eq!(entries[1].action, ActionLabel::HandWaving);
        assert!(parse_sequences("person01_boxing_d1 frames 5-5", Path::new("seq")).is_err());
        assert!(parse_sequences("person01_dancing_d1 frames 1-5", Path::new("seq")).is_err());
    }

    #[test]
    fn corpus_round_trip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticCorpusSpec {
            actors: 2,
            videos_per_actor: 2,
            resolution: (16, 16),
            size: 4.0,
            motion: Motion::Linear { velocity: (0.02, 0.0) },
            start_x: (3.0, 4.0),
            start_y: (4.0, 12.0),
            ..SyntheticCorpusSpec::moving_square_64()
        };
        let g = spec.generate().unwrap();
        write_corpus(dir.path(), &g.corpus, &g.segments).unwrap();
        let (corpus, segments) = read_corpus(dir.path()).unwrap();
        assert_eq!(segments, g.segments);
        assert_eq!(corpus.len(), 4);
        for (a, b) in corpus.videos().zip(g.corpus.videos()) {
            assert_eq!(a.frames.len(), b.frames.len());
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                assert_eq!(fa.to_u8(), fb.to_u8());
            }
        }
        // without the video table the frame directories are enough
        fs::remove_file(dir.path().join(VIDEOS_FILE)).unwrap();
        let (again, _) = read_corpus(dir.path()).unwrap();
        assert_eq!(again, corpus);
    }

    #[test]
    fn malformed_tables_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(SEGMENTS_FILE), format!("{SEGMENTS_HEADER}\nv\ta\twalking\t0\tx\t25\n")).unwrap();
        let err = read_segments(dir.path()).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("end_frame"), "{err}");
    }

    #[test]
    fn ingest_crops_raw_frames() {
        let dir = tempfile::tempdir().unwrap();
        let video = dir.path().join("person03_walking_d2");
        fs::create_dir(&video).unwrap();
        for i in 0..4 {
            // column index encodes position so the crop offset is visible
            let raw = Frame::from_fn(120, 160, |_, c| c as f32 / 255.0).unwrap();
            write_frame(&video.join(format!("img{i:03}.png")), &raw).unwrap();
        }
        let entries = parse_sequences("person03_walking_d2 frames 1-3", Path::new("s")).unwrap();
        let (corpus, segments) = ingest(dir.path(), &entries, None).unwrap();
        let v = corpus.get("person03_walking_d2").unwrap();
        assert_eq!(v.frames.len(), 4);
        assert_eq!(v.frames[0].resolution(), (120, 120));
        assert_eq!(v.frames[0].to_u8()[0], 20);
        assert_eq!(segments[0].start_frame, 0);
        assert_eq!(segments[0].end_frame, 2);
        assert_eq!(segments[0].fps, 25.0);
    }

    #[test]
    fn output_dir_guard() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        prepare_output_dir(&out, false).unwrap();
        fs::write(out.join("x"), "1").unwrap();
        assert!(matches!(prepare_output_dir(&out, false), Err(Error::Exists(_))));
        prepare_output_dir(&out, true).unwrap();
        assert!(fs::read_dir(&out).unwrap().next().is_none());
    }
}
