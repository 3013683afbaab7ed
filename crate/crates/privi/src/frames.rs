//! Frame access: numbered raw-frame directories and the decoder subprocess
//! protocol, plus PNG encoding of keyframes.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use privi_core::curation::{Frame, FrameSource, Keyframe, Snippet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";

/// Largest frame side a decoder may report.
const MAX_DECODED_SIDE: u32 = 16_384;

/// `meta.json` of a raw frame directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoMeta {
    pub source_id: String,
    pub fps: f64,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    /// Free-form content label handed to synthetic providers.
    #[serde(default)]
    pub label: Option<String>,
}

/// One video known to the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub video_ref: String,
    pub source_id: String,
    pub fps: f64,
    pub frame_count: usize,
    #[serde(default)]
    pub label: Option<String>,
}

impl VideoEntry {
    pub fn duration_s(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }

    /// Index of the frame shown at time `t`.
    pub fn frame_at(&self, t: f64) -> usize {
        ((t * self.fps + 1e-9).floor().max(0.0) as usize).min(self.frame_count.saturating_sub(1))
    }
}

pub fn frame_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:06}.rgb"))
}

/// A directory holding `meta.json` and frames `000000.rgb`, `000001.rgb`, …
/// of packed RGB8 pixels.
#[derive(Debug, Clone)]
pub struct DirFrameSource {
    pub dir: PathBuf,
    pub meta: VideoMeta,
}

impl DirFrameSource {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let path = dir.join(META_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let meta: VideoMeta =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        if !(meta.fps > 0.0) || meta.width == 0 || meta.height == 0 {
            return Err(Error::format(path.display().to_string(), "fps, width and height must be positive"));
        }
        Ok(Self { dir, meta })
    }
}

impl FrameSource for DirFrameSource {
    fn frame_count(&self) -> usize {
        self.meta.frame_count
    }

    fn fps(&self) -> f64 {
        self.meta.fps
    }

    fn frame(&self, index: usize) -> privi_core::Result<Frame> {
        let path = frame_file(&self.dir, index);
        let rgb = std::fs::read(&path)
            .map_err(|e| privi_core::Error::InvalidInput(format!("{}: {e}", path.display())))?;
        Frame::new(self.meta.width, self.meta.height, rgb)
    }
}

/// Writes a frame directory (used by fixtures and tests).
pub fn write_frame_dir(dir: &Path, meta: &VideoMeta, frames: impl IntoIterator<Item = Frame>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for (i, f) in frames.into_iter().enumerate() {
        let path = frame_file(dir, i);
        std::fs::write(&path, &f.rgb).map_err(|e| Error::io(&path, e))?;
        n += 1;
    }
    if n != meta.frame_count {
        return Err(Error::Config(format!("{} frames written, meta declares {}", n, meta.frame_count)));
    }
    let path = dir.join(META_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(meta).expect("in-memory serialization")).map_err(|e| Error::io(&path, e))
}

struct DecoderPipes {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A long-running decoder process. Each request is one line
/// `<video_ref> <timestamp_s>\n` on its stdin; the reply on stdout is width
/// and height as little-endian `u32` followed by `width·height·3` RGB bytes.
/// Requests are serialized; a broken pipe restarts the process once.
pub struct Decoder {
    command: Vec<String>,
    pipes: Mutex<Option<DecoderPipes>>,
}

impl std::fmt::Debug for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Decoder").field("command", &self.command).finish()
    }
}

impl Decoder {
    pub fn new(command: Vec<String>) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::Config("decoder command is empty".into()));
        }
        Ok(Self { command, pipes: Mutex::new(None) })
    }

    fn spawn(&self) -> std::io::Result<DecoderPipes> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(DecoderPipes { child, stdin, stdout })
    }

    fn exchange(p: &mut DecoderPipes, video_ref: &str, t: f64) -> std::io::Result<Frame> {
        writeln!(p.stdin, "{video_ref} {t}")?;
        p.stdin.flush()?;
        let mut header = [0u8; 8];
        p.stdout.read_exact(&mut header)?;
        let w = u32::from_le_bytes(header[..4].try_into().unwrap());
        let h = u32::from_le_bytes(header[4..].try_into().unwrap());
        if w == 0 || h == 0 || w > MAX_DECODED_SIDE || h > MAX_DECODED_SIDE {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("decoder reported {w}x{h}")));
        }
        let mut rgb = vec![0u8; w as usize * h as usize * 3];
        p.stdout.read_exact(&mut rgb)?;
        Ok(Frame { width: w, height: h, rgb })
    }

    pub fn frame(&self, video_ref: &str, t: f64) -> privi_core::Result<Frame> {
        let mut guard = self.pipes.lock().unwrap_or_else(|e| e.into_inner());
        let mut last_err = None;
        for _ in 0..2 {
            if guard.is_none() {
                *guard = Some(self.spawn().map_err(|e| privi_core::Error::InvalidInput(format!("cannot start decoder: {e}")))?);
            }
            match Self::exchange(guard.as_mut().unwrap(), video_ref, t) {
                Ok(f) => return Ok(f),
                Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                    *guard = None;
                    return Err(privi_core::Error::InvalidInput(format!("decoder: {e}")));
                }
                Err(e) => {
                    if let Some(mut p) = guard.take() {
                        let _ = p.child.kill();
                        let _ = p.child.wait();
                    }
                    last_err = Some(e);
                }
            }
        }
        Err(privi_core::Error::InvalidInput(format!("decoder failed for {video_ref} at {t}s: {}", last_err.unwrap())))
    }
}

impl Drop for Decoder {
    fn drop(&mut self) {
        if let Some(mut p) = self.pipes.get_mut().unwrap_or_else(|e| e.into_inner()).take() {
            drop(p.stdin);
            let _ = p.child.wait();
        }
    }
}

/// Frames of one video fetched through a [`Decoder`] at `index / fps`.
#[derive(Debug, Clone)]
pub struct DecoderFrameSource {
    pub decoder: Arc<Decoder>,
    pub video: VideoEntry,
}

impl FrameSource for DecoderFrameSource {
    fn frame_count(&self) -> usize {
        self.video.frame_count
    }

    fn fps(&self) -> f64 {
        self.video.fps
    }

    fn frame(&self, index: usize) -> privi_core::Result<Frame> {
        self.decoder.frame(&self.video.video_ref, index as f64 / self.video.fps)
    }
}

/// Serves the decoder protocol from frame directories under `root`
/// (`<root>/<video_ref>/`), reading requests from `input` until EOF.
pub fn serve_decoder(root: &Path, input: impl BufRead, mut output: impl Write) -> Result<()> {
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        let (video_ref, t) = line
            .rsplit_once(' ')
            .and_then(|(v, t)| Some((v, t.trim().parse::<f64>().ok()?)))
            .ok_or_else(|| Error::format("<stdin>", format!("bad decoder request '{line}'")))?;
        let src = DirFrameSource::open(root.join(video_ref))?;
        let entry = VideoEntry {
            video_ref: video_ref.into(),
            source_id: src.meta.source_id.clone(),
            fps: src.meta.fps,
            frame_count: src.meta.frame_count,
            label: None,
        };
        let frame = src.frame(entry.frame_at(t))?;
        let mut buf = Vec::with_capacity(8 + frame.rgb.len());
        buf.extend_from_slice(&frame.width.to_le_bytes());
        buf.extend_from_slice(&frame.height.to_le_bytes());
        buf.extend_from_slice(&frame.rgb);
        output.write_all(&buf).and_then(|_| output.flush()).map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

/// Keyframe of a snippet: the frame at its center time.
pub fn keyframe(source: &dyn FrameSource, video: &VideoEntry, snippet: &Snippet) -> privi_core::Result<Keyframe> {
    let frame = source.frame(video.frame_at(snippet.keyframe_time_s))?;
    Ok(Keyframe { snippet_id: snippet.snippet_id.clone(), frame, label_hint: video.label.clone() })
}

pub fn encode_png(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width, frame.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("writing to memory");
        w.write_image_data(&frame.rgb).expect("frame buffer matches its dimensions");
    }
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<Frame> {
    let bad = |e: png::DecodingError| Error::format("<png>", e.to_string());
    let mut reader = png::Decoder::new(bytes).read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format("<png>", "expected 8-bit RGB"));
    }
    buf.truncate(info.buffer_size());
    Ok(Frame::new(info.width, info.height, buf)?)
}
