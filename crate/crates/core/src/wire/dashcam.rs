//! Dashcam emulator: captures at the native rate from an in-memory frame set,
//! forwards a decimated stream to the coordinator and follows RATE updates.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::{read_message, write_message, FramePayload, Hello, Message, Role};
use crate::model::VideoSource;

#[derive(Debug, Error)]
pub enum DashcamError {
    #[error("frame set {path}: {source}")]
    FrameSet { path: PathBuf, source: io::Error },
    #[error("frame set {0} contains no files")]
    EmptyFrameSet(PathBuf),
    #[error("gave up connecting to {addr} after {attempts} attempts: {last}")]
    Unreachable {
        addr: SocketAddr,
        attempts: u32,
        last: io::Error,
    },
}

/// Whether frame `k` (1-indexed capture counter) is forwarded when a camera
/// capturing at `native_millifps` transmits at `rate_millifps`.
///
/// Keeps `k` iff `floor(k*r/F) > floor((k-1)*r/F)`, so exactly
/// `floor(n*r/F)` of the first `n` frames pass.
pub fn keep_frame(k: u64, rate_millifps: u32, native_millifps: u32) -> bool {
    if k == 0 || native_millifps == 0 {
        return false;
    }
    let r = rate_millifps.min(native_millifps) as u128;
    let f = native_millifps as u128;
    let k = k as u128;
    (k * r) / f > ((k - 1) * r) / f
}

/// Frames held in memory and replayed in a loop.
#[derive(Debug, Clone)]
pub struct FrameSet {
    frames: Vec<Vec<u8>>,
}

impl FrameSet {
    /// `count` opaque blobs whose sizes are drawn around `mean_bytes`.
    pub fn synthetic(mean_bytes: u32, cv: f64, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = mean_bytes as f64;
        let count = count.max(1);
        let mut sizes: Vec<f64> = if cv > 0.0 {
            let normal = Normal::new(mean, mean * cv).expect("finite parameters");
            (0..count).map(|_| normal.sample(&mut rng).max(1.0)).collect()
        } else {
            vec![mean; count]
        };
        // recentre so the set's average is exactly the requested mean
        let avg = sizes.iter().sum::<f64>() / count as f64;
        for s in &mut sizes {
            *s = (*s - avg + mean).max(1.0);
        }
        let frames = sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| vec![(i % 251) as u8; s.round() as usize])
            .collect();
        FrameSet { frames }
    }

    /// Every regular file in `dir`, ordered by name, loaded up front.
    pub fn from_dir(dir: &Path) -> Result<Self, DashcamError> {
        let err = |source| DashcamError::FrameSet {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(err)? {
            let entry = entry.map_err(err)?;
            if entry.file_type().map_err(err)?.is_file() {
                paths.push(entry.path());
            }
        }
        paths.sort();
        if paths.is_empty() {
            return Err(DashcamError::EmptyFrameSet(dir.to_path_buf()));
        }
        let frames = paths
            .iter()
            .map(|p| {
                std::fs::read(p).map_err(|source| DashcamError::FrameSet {
                    path: p.clone(),
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(FrameSet { frames })
    }

    pub fn from_blobs(frames: Vec<Vec<u8>>) -> Self {
        assert!(!frames.is_empty(), "frame set needs at least one frame");
        FrameSet { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Blob for 1-indexed capture `k`, wrapping around the set.
    pub fn frame(&self, k: u64) -> &[u8] {
        &self.frames[((k.max(1) - 1) % self.frames.len() as u64) as usize]
    }

    /// Index (0-based) into the set of capture `k`.
    pub fn position(&self, k: u64) -> usize {
        ((k.max(1) - 1) % self.frames.len() as u64) as usize
    }

    pub fn mean_size(&self) -> f64 {
        self.frames.iter().map(|f| f.len() as f64).sum::<f64>() / self.frames.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct DashcamConfig {
    pub coordinator: SocketAddr,
    pub source: VideoSource,
    pub name: String,
    pub native_fps: f64,
    /// Transfer rate used until the coordinator sends one.
    pub initial_rate: f64,
    pub frames: FrameSet,
    /// Stop after this many captures (not transfers).
    pub max_captures: Option<u64>,
    pub ping_interval: Duration,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub max_attempts: u32,
}

impl DashcamConfig {
    pub fn new(coordinator: SocketAddr, source: VideoSource, frames: FrameSet) -> Self {
        DashcamConfig {
            coordinator,
            source,
            name: format!("dashcam-{}", source.name()),
            native_fps: 30.0,
            initial_rate: 30.0,
            frames,
            max_captures: None,
            ping_interval: Duration::from_secs(1),
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(5),
            max_attempts: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DashcamStats {
    pub captured: u64,
    pub sent: u64,
    pub pings: u64,
    pub reconnects: u32,
    pub rate_updates: u64,
}

struct Link {
    writer: BufWriter<TcpStream>,
    stream: TcpStream,
    reader: Option<thread::JoinHandle<()>>,
}

impl Link {
    fn close(mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

fn connect(
    cfg: &DashcamConfig,
    rate: &Arc<AtomicU32>,
    updates: &Arc<AtomicU32>,
    stop: &Arc<AtomicBool>,
) -> Result<Link, DashcamError> {
    let mut backoff = cfg.initial_backoff;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let res = TcpStream::connect(cfg.coordinator).and_then(|stream| {
            stream.set_nodelay(true)?;
            let mut writer = BufWriter::new(stream.try_clone()?);
            write_message(
                &mut writer,
                &Message::Hello(Hello {
                    role: Role::Dashcam,
                    source: cfg.source,
                    worker_id: 0,
                    name: cfg.name.clone(),
                }),
            )?;
            writer.flush()?;
            Ok((stream, writer))
        });
        match res {
            Ok((stream, writer)) => {
                let read_half = stream.try_clone().map_err(|last| DashcamError::Unreachable {
                    addr: cfg.coordinator,
                    attempts: attempt,
                    last,
                })?;
                let rate = Arc::clone(rate);
                let updates = Arc::clone(updates);
                let reader = thread::spawn(move || {
                    let mut r = BufReader::new(read_half);
                    loop {
                        match read_message(&mut r) {
                            Ok(Message::Rate(p)) => {
                                rate.store(p.per_camera_rate_millifps, Ordering::Relaxed);
                                updates.fetch_add(1, Ordering::Relaxed);
                            }
                            Ok(Message::Bye) | Err(_) => break,
                            Ok(other) => debug!("dashcam ignoring {:?}", other.type_byte()),
                        }
                    }
                });
                info!("{} connected to {}", cfg.name, cfg.coordinator);
                return Ok(Link {
                    writer,
                    stream,
                    reader: Some(reader),
                });
            }
            Err(last) => {
                if attempt >= cfg.max_attempts || stop.load(Ordering::Relaxed) {
                    return Err(DashcamError::Unreachable {
                        addr: cfg.coordinator,
                        attempts: attempt,
                        last,
                    });
                }
                warn!("{} connect failed ({last}); retrying in {backoff:?}", cfg.name);
                thread::sleep(backoff);
                backoff = (backoff * 2).min(cfg.max_backoff);
            }
        }
    }
}

/// Runs until `stop` is set, `max_captures` is reached, or the coordinator
/// says BYE / stays unreachable.
pub fn dashcam_source_run(
    cfg: &DashcamConfig,
    stop: Arc<AtomicBool>,
) -> Result<DashcamStats, DashcamError> {
    let native_m = super::to_millifps(cfg.native_fps);
    let rate = Arc::new(AtomicU32::new(super::to_millifps(cfg.initial_rate)));
    let updates = Arc::new(AtomicU32::new(0));
    let mut stats = DashcamStats::default();
    let mut link = connect(cfg, &rate, &updates, &stop)?;
    let period = Duration::from_secs_f64(1.0 / cfg.native_fps.max(1e-3));
    let start = Instant::now();
    let mut last_ping = start;
    let mut k: u64 = 0;
    while !stop.load(Ordering::Relaxed) {
        if cfg.max_captures.is_some_and(|m| k >= m) {
            break;
        }
        k += 1;
        let due = start + period * (k as u32);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        stats.captured += 1;
        let r = rate.load(Ordering::Relaxed);
        let msg = if r == 0 {
            if last_ping.elapsed() < cfg.ping_interval {
                continue;
            }
            last_ping = Instant::now();
            stats.pings += 1;
            Message::Ping
        } else if keep_frame(k, r, native_m) {
            stats.sent += 1;
            Message::Frame(FramePayload {
                frame_id: k,
                source: cfg.source,
                capture_ts_us: start.elapsed().as_micros() as u64,
                blob: cfg.frames.frame(k).to_vec(),
            })
        } else {
            continue;
        };
        let sent = write_message(&mut link.writer, &msg).and_then(|_| link.writer.flush());
        if let Err(e) = sent {
            warn!("{} lost coordinator: {e}", cfg.name);
            link.close();
            stats.reconnects += 1;
            link = connect(cfg, &rate, &updates, &stop)?;
        } else if link.reader.as_ref().is_some_and(|h| h.is_finished()) {
            // coordinator closed the stream or said BYE
            break;
        }
    }
    let _ = write_message(&mut link.writer, &Message::Bye).and_then(|_| link.writer.flush());
    link.close();
    stats.rate_updates = updates.load(Ordering::Relaxed) as u64;
    Ok(stats)
}
