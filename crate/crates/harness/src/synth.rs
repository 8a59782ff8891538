//! Synthetic two-domain tracking benchmark.
//!
//! Targets are head-and-torso blocks whose torso colour or pattern encodes a
//! Trackbook phrase. They drift with noisy headings, bounce off the frame
//! edges, live for a random number of frames and are then replaced under a
//! fresh id. Ground truth boxes are the exact rendered pixel extents.

use std::fs;
use std::path::{Path, PathBuf};

use ltrack_core::losses::GtTarget;
use ltrack_core::perception::{Bbox, ImageFrame};
use ltrack_core::trackbook::Trackbook;
use ltrack_metrics::{read_mot, write_mot, Detection, Rect, Sequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Provenance tag written into every generated sequence.
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// Mean background intensity in `[0, 1]`.
    pub background: f64,
    pub texture_seed: u64,
    pub texture_amplitude: f64,
    /// Targets visible per frame when nothing is occluded.
    pub density: usize,
    /// Target height as a fraction of frame height, `[min, max]`.
    pub scale: [f64; 2],
    /// Width over height.
    pub aspect: [f64; 2],
    /// Pixels per frame.
    pub speed: f64,
    /// Std of the per-frame heading change, radians.
    pub direction_noise: f64,
    /// Per-frame probability that a visible target starts a short occlusion.
    pub occlusion_rate: f64,
    /// Frames a target lives before it is replaced, `[min, max]`.
    pub lifetime: [u32; 2],
    /// Trackbook phrases drawn per target; each has a rendering.
    pub attributes: Vec<String>,
    /// Std of additive pixel noise.
    pub noise: f64,
}

/// Torso renderings keyed by the phrase's distinguishing word.
const APPEARANCE: [(&str, [f64; 3], [f64; 3]); 8] = [
    ("red", [0.85, 0.15, 0.15], [0.85, 0.15, 0.15]),
    ("blue", [0.15, 0.25, 0.85], [0.15, 0.25, 0.85]),
    ("green", [0.15, 0.7, 0.2], [0.15, 0.7, 0.2]),
    ("yellow", [0.9, 0.85, 0.15], [0.9, 0.85, 0.15]),
    ("white", [0.95, 0.95, 0.95], [0.95, 0.95, 0.95]),
    ("black", [0.05, 0.05, 0.05], [0.05, 0.05, 0.05]),
    ("striped", [0.85, 0.15, 0.15], [0.95, 0.95, 0.95]),
    ("checkered", [0.15, 0.25, 0.85], [0.9, 0.85, 0.15]),
];
const SKIN: [f64; 3] = [0.9, 0.7, 0.55];

fn appearance(phrase: &str) -> Option<([f64; 3], [f64; 3], bool)> {
    APPEARANCE.iter().find_map(|(word, a, b)| {
        phrase
            .split_whitespace()
            .any(|w| w == *word)
            .then_some((*a, *b, *word == "checkered"))
    })
}

/// Phrases of the default Trackbook that have a rendering.
pub fn renderable_attributes() -> Vec<String> {
    Trackbook::default()
        .phrases()
        .iter()
        .filter(|p| appearance(p).is_some())
        .cloned()
        .collect()
}

impl DomainSpec {
    /// Training domain: few, large targets on a bright background.
    pub fn domain_a() -> Self {
        Self {
            name: "A".into(),
            width: 64,
            height: 64,
            background: 0.75,
            texture_seed: 11,
            texture_amplitude: 0.05,
            density: 2,
            scale: [0.3, 0.45],
            aspect: [0.4, 0.6],
            speed: 0.6,
            direction_noise: 0.15,
            occlusion_rate: 0.0,
            lifetime: [20, 60],
            attributes: renderable_attributes(),
            noise: 0.02,
        }
    }

    /// Evaluation domain: more, smaller targets on a darker, noisier background.
    pub fn domain_b() -> Self {
        Self {
            name: "B".into(),
            background: 0.55,
            texture_seed: 23,
            texture_amplitude: 0.08,
            density: 4,
            scale: [0.22, 0.32],
            speed: 0.5,
            direction_noise: 0.25,
            occlusion_rate: 0.02,
            noise: 0.04,
            ..Self::domain_a()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.width == 0 || self.height == 0 || self.width % 32 != 0 || self.height % 32 != 0 {
            return bad(format!("frame {}x{} must be a positive multiple of 32", self.width, self.height));
        }
        if self.density < 1 {
            return bad("density must be at least 1".into());
        }
        let [lo, hi] = self.scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad(format!("scale [{lo}, {hi}] must lie in (0, 1]"));
        }
        let [alo, ahi] = self.aspect;
        if !(0.0 < alo && alo <= ahi) || ahi * hi * self.height as f64 > self.width as f64 {
            return bad(format!("aspect [{alo}, {ahi}] does not fit the frame"));
        }
        if self.lifetime[0] < 1 || self.lifetime[0] > self.lifetime[1] {
            return bad("lifetime must be 1 <= min <= max".into());
        }
        if !(0.0..1.0).contains(&self.occlusion_rate) {
            return bad("occlusion_rate must be in [0, 1)".into());
        }
        if self.attributes.is_empty() {
            return bad("attribute list is empty".into());
        }
        let book = Trackbook::default();
        for a in &self.attributes {
            if !book.phrases().contains(a) {
                return bad(format!("attribute {a:?} is not a Trackbook phrase"));
            }
            if appearance(a).is_none() {
                return bad(format!("attribute {a:?} has no rendering"));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u32,
    /// Pixel rectangle `(left, top, width, height)`.
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
    /// Index into the sequence's attribute list.
    pub attribute: usize,
}

impl GtObject {
    pub fn bbox(&self, frame_w: usize, frame_h: usize) -> Bbox {
        Bbox::from_corners(
            self.left as f64 / frame_w as f64,
            self.top as f64 / frame_h as f64,
            (self.left + self.width) as f64 / frame_w as f64,
            (self.top + self.height) as f64 / frame_h as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqInfo {
    pub name: String,
    /// Provenance tag: the generating domain's name.
    pub domain: String,
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub seed: u64,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub info: SeqInfo,
    pub frames: Vec<ImageFrame>,
    /// Ground truth per frame, sorted by id.
    pub gt: Vec<Vec<GtObject>>,
}

struct Target {
    id: u32,
    x: f64,
    y: f64,
    heading: f64,
    w: usize,
    h: usize,
    attribute: usize,
    remaining: u32,
    hidden: u32,
}

fn spawn(spec: &DomainSpec, id: u32, rng: &mut ChaCha8Rng) -> Target {
    let h = ((rng.random_range(spec.scale[0]..=spec.scale[1]) * spec.height as f64).round() as usize).max(4);
    let w = ((rng.random_range(spec.aspect[0]..=spec.aspect[1]) * h as f64).round() as usize)
        .clamp(2, spec.width);
    let h = h.min(spec.height);
    Target {
        id,
        x: rng.random_range(w as f64 / 2.0..=spec.width as f64 - w as f64 / 2.0),
        y: rng.random_range(h as f64 / 2.0..=spec.height as f64 - h as f64 / 2.0),
        heading: rng.random_range(0.0..std::f64::consts::TAU),
        w,
        h,
        attribute: rng.random_range(0..spec.attributes.len()),
        remaining: rng.random_range(spec.lifetime[0]..=spec.lifetime[1]),
        hidden: 0,
    }
}

impl Target {
    fn rect(&self, spec: &DomainSpec) -> (usize, usize) {
        let left = (self.x - self.w as f64 / 2.0).round().clamp(0.0, (spec.width - self.w) as f64) as usize;
        let top = (self.y - self.h as f64 / 2.0).round().clamp(0.0, (spec.height - self.h) as f64) as usize;
        (left, top)
    }

    fn advance(&mut self, spec: &DomainSpec, turn: f64) {
        self.heading += turn;
        let (hw, hh) = (self.w as f64 / 2.0, self.h as f64 / 2.0);
        let mut nx = self.x + spec.speed * self.heading.cos();
        let mut ny = self.y + spec.speed * self.heading.sin();
        if nx < hw || nx > spec.width as f64 - hw {
            self.heading = std::f64::consts::PI - self.heading;
            nx = nx.clamp(hw, spec.width as f64 - hw);
        }
        if ny < hh || ny > spec.height as f64 - hh {
            self.heading = -self.heading;
            ny = ny.clamp(hh, spec.height as f64 - hh);
        }
        self.x = nx;
        self.y = ny;
    }
}

fn background(spec: &DomainSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let cell = 8;
    let (gw, gh) = (spec.width.div_ceil(cell), spec.height.div_ceil(cell));
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; spec.width * spec.height * 3];
    for y in 0..spec.height {
        for x in 0..spec.width {
            let v = spec.background + spec.texture_amplitude * grid[(y / cell) * gw + x / cell];
            for c in 0..3 {
                out[(y * spec.width + x) * 3 + c] = v;
            }
        }
    }
    out
}

fn paint(pixels: &mut [f64], width: usize, o: &GtObject, phrase: &str) {
    let (a, b, checks) = appearance(phrase).expect("validated attribute");
    let head = (o.height / 4).max(1);
    for dy in 0..o.height {
        for dx in 0..o.width {
            let color = if dy < head {
                SKIN
            } else {
                let band = (dy - head) / 2;
                let alt = if checks { (band + dx / 2) % 2 == 1 } else { band % 2 == 1 };
                if alt {
                    b
                } else {
                    a
                }
            };
            let p = ((o.top + dy) * width + o.left + dx) * 3;
            pixels[p..p + 3].copy_from_slice(&color);
        }
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Deterministic under `(spec, frames, seed)`.
pub fn generate(spec: &DomainSpec, frames: usize, seed: u64, name: &str) -> Result<SynthSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_65);
    let turn = Normal::new(0.0, spec.direction_noise.max(0.0)).map_err(|e| Error::Domain(e.to_string()))?;
    let pixel_noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Domain(e.to_string()))?;
    let bg = background(spec);
    let mut next_id = 1;
    let mut targets: Vec<Target> = (0..spec.density)
        .map(|_| {
            next_id += 1;
            spawn(spec, next_id - 1, &mut rng)
        })
        .collect();

    let mut out_frames = Vec::with_capacity(frames);
    let mut gt = Vec::with_capacity(frames);
    for t in 0..frames {
        if t > 0 {
            for target in targets.iter_mut() {
                target.remaining -= 1;
                if target.remaining == 0 {
                    *target = spawn(spec, next_id, &mut rng);
                    next_id += 1;
                    continue;
                }
                target.advance(spec, turn.sample(&mut rng));
                if target.hidden > 0 {
                    target.hidden -= 1;
                } else if rng.random::<f64>() < spec.occlusion_rate {
                    target.hidden = rng.random_range(1..=3);
                }
            }
        }
        let mut pixels = bg.clone();
        let mut objects = Vec::new();
        for target in targets.iter().filter(|t| t.hidden == 0) {
            let (left, top) = target.rect(spec);
            let o = GtObject {
                id: target.id,
                left,
                top,
                width: target.w,
                height: target.h,
                attribute: target.attribute,
            };
            paint(&mut pixels, spec.width, &o, &spec.attributes[target.attribute]);
            objects.push(o);
        }
        for p in pixels.iter_mut() {
            *p = quantize(*p + pixel_noise.sample(&mut noise_rng));
        }
        objects.sort_by_key(|o| o.id);
        out_frames.push(ImageFrame::new(spec.height, spec.width, pixels, t as u32 + 1)?);
        gt.push(objects);
    }
    Ok(SynthSequence {
        info: SeqInfo {
            name: name.to_string(),
            domain: spec.name.clone(),
            width: spec.width,
            height: spec.height,
            length: frames,
            seed,
            attributes: spec.attributes.clone(),
        },
        frames: out_frames,
        gt,
    })
}

impl SynthSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Normalised targets for frame `t` (0-based); `newborn` left false.
    pub fn targets(&self, t: usize) -> Vec<GtTarget> {
        self.gt[t]
            .iter()
            .map(|o| GtTarget {
                id: o.id,
                bbox: o.bbox(self.info.width, self.info.height),
                newborn: false,
            })
            .collect()
    }

    pub fn gt_sequence(&self) -> Sequence {
        let frames = self
            .gt
            .iter()
            .map(|objs| {
                objs.iter()
                    .map(|o| {
                        Detection::new(
                            o.id,
                            Rect::new(o.left as f64, o.top as f64, o.width as f64, o.height as f64),
                        )
                    })
                    .collect()
            })
            .collect();
        Sequence::from_frames(frames).expect("generated ids are positive and unique per frame")
    }

    /// Writes `seqinfo.json`, `img/NNNNNN.png` and `gt/gt.txt` plus
    /// `gt/attributes.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let img = dir.join("img");
        let gt_dir = dir.join("gt");
        for d in [&img, &gt_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let info = dir.join("seqinfo.json");
        fs::write(&info, serde_json::to_string_pretty(&self.info)?).map_err(|e| Error::io(&info, e))?;
        for f in &self.frames {
            write_png(&img.join(format!("{:06}.png", f.frame_index)), f)?;
        }
        let gt_path = gt_dir.join("gt.txt");
        write_mot(&gt_path, &self.gt_sequence()).map_err(|e| match e {
            ltrack_metrics::Error::Io(io) => Error::io(&gt_path, io),
            other => other.into(),
        })?;
        // (frame, id, attribute index) triples.
        let attrs: Vec<(usize, u32, usize)> = self
            .gt
            .iter()
            .enumerate()
            .flat_map(|(t, objs)| objs.iter().map(move |o| (t + 1, o.id, o.attribute)))
            .collect();
        let attr_path = gt_dir.join("attributes.json");
        fs::write(&attr_path, serde_json::to_string(&attrs)?).map_err(|e| Error::io(&attr_path, e))?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let info_path = dir.join("seqinfo.json");
        let text = fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
        let info: SeqInfo = serde_json::from_str(&text).map_err(|e| Error::format(&info_path, e))?;
        let mut frames = Vec::with_capacity(info.length);
        for t in 1..=info.length {
            let p = dir.join("img").join(format!("{t:06}.png"));
            frames.push(read_png(&p, t as u32)?);
        }
        let gt_path = dir.join("gt").join("gt.txt");
        let seq = read_mot(&gt_path).map_err(|e| Error::format(&gt_path, e))?;
        let attr_path = dir.join("gt").join("attributes.json");
        let text = fs::read_to_string(&attr_path).map_err(|e| Error::io(&attr_path, e))?;
        let attrs: Vec<(usize, u32, usize)> = serde_json::from_str(&text).map_err(|e| Error::format(&attr_path, e))?;
        let mut gt: Vec<Vec<GtObject>> = vec![Vec::new(); info.length];
        for (t, dets) in seq.frames().iter().enumerate().take(info.length) {
            for d in dets {
                let attribute = attrs
                    .iter()
                    .find(|(f, id, _)| *f == t + 1 && *id == d.id)
                    .map(|x| x.2)
                    .ok_or_else(|| Error::format(&attr_path, format!("no attribute for id {} in frame {}", d.id, t + 1)))?;
                gt[t].push(GtObject {
                    id: d.id,
                    left: d.rect.left as usize,
                    top: d.rect.top as usize,
                    width: d.rect.width as usize,
                    height: d.rect.height as usize,
                    attribute,
                });
            }
        }
        Ok(Self { info, frames, gt })
    }
}

fn write_png(path: &Path, frame: &ImageFrame) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), frame.width() as u32, frame.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = frame.pixels().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut w = enc.write_header().map_err(|e| Error::format(path, e))?;
    w.write_image_data(&bytes).map_err(|e| Error::format(path, e))?;
    Ok(())
}

fn read_png(path: &Path, frame_index: u32) -> Result<ImageFrame> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "expected 8-bit RGB"));
    }
    let pixels = buf[..info.buffer_size()].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(ImageFrame::new(info.height as usize, info.width as usize, pixels, frame_index)?)
}

/// Generates `count` sequences named `{prefix}{i:02}` with seeds `seed + i`.
pub fn generate_split(spec: &DomainSpec, count: usize, frames: usize, seed: u64, prefix: &str) -> Result<Vec<SynthSequence>> {
    (0..count)
        .map(|i| generate(spec, frames, seed.wrapping_add(i as u64), &format!("{prefix}{:02}", i + 1)))
        .collect()
}

/// Reads sequences and checks each carries the expected provenance tag.
pub fn read_split(dirs: &[PathBuf], expected_domain: &str) -> Result<Vec<SynthSequence>> {
    dirs.iter()
        .map(|d| {
            let seq = SynthSequence::read(d)?;
            check_provenance(&seq, d, expected_domain)?;
            Ok(seq)
        })
        .collect()
}

pub fn check_provenance(seq: &SynthSequence, path: &Path, expected: &str) -> Result<()> {
    if seq.info.domain != expected {
        return Err(Error::Provenance {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found: seq.info.domain.clone(),
        });
    }
    Ok(())
}
