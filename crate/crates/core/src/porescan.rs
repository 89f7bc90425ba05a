//! Porosity image pipeline: crop, Otsu binarization, disk dilation,
//! distance-transform watershed, component labeling and pore geometry.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numfmt::g6;
use crate::par;

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width * height != data.len() {
            return Err(Error::Image(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }
}

/// Foreground mask, row-major; `true` marks pore pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Per-pixel region labels; 0 is background, regions are `1..=count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: u32,
}

impl LabelImage {
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

const N8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

fn neighbors8(w: usize, h: usize, i: usize) -> impl Iterator<Item = usize> {
    let (x, y) = ((i % w) as isize, (i / w) as isize);
    N8.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then(|| ny as usize * w + nx as usize)
    })
}

/// Central window with `margin` pixels removed from every side.
pub fn crop_borders(img: &GrayImage, margin: usize) -> Result<GrayImage> {
    if 2 * margin >= img.width.min(img.height) {
        return Err(Error::InvalidArgument(format!(
            "margin {margin} leaves no pixels in a {}x{} image",
            img.width, img.height
        )));
    }
    let (w, h) = (img.width - 2 * margin, img.height - 2 * margin);
    let mut data = Vec::with_capacity(w * h);
    for y in margin..margin + h {
        let start = y * img.width + margin;
        data.extend_from_slice(&img.data[start..start + w]);
    }
    GrayImage::new(w, h, data)
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in &img.data {
        hist[v as usize] += 1;
    }
    hist
}

/// Otsu threshold. Pixels `<= t` form the lower class. A histogram with a
/// single occupied bin is degenerate and yields no foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Threshold {
    pub t: u8,
    pub degenerate: bool,
}

/// Between-class variance of the split at `t`, scaled by `N²`.
pub fn between_class_variance(hist: &[u64; 256], t: usize) -> f64 {
    let n: u64 = hist.iter().sum();
    let s: u128 = hist.iter().enumerate().map(|(v, &c)| v as u128 * c as u128).sum();
    let n0: u64 = hist[..=t].iter().sum();
    let s0: u128 = hist[..=t].iter().enumerate().map(|(v, &c)| v as u128 * c as u128).sum();
    let n1 = n - n0;
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let diff = n as i128 * s0 as i128 - n0 as i128 * s as i128;
    let d = diff as f64;
    d * d / (n0 as f64 * n1 as f64)
}

pub fn otsu_from_histogram(hist: &[u64; 256]) -> Threshold {
    let occupied: Vec<usize> = (0..256).filter(|&v| hist[v] > 0).collect();
    if occupied.len() <= 1 {
        return Threshold {
            t: occupied.first().copied().unwrap_or(0) as u8,
            degenerate: true,
        };
    }
    let n: u64 = hist.iter().sum();
    let s: u128 = hist.iter().enumerate().map(|(v, &c)| v as u128 * c as u128).sum();
    let (mut n0, mut s0) = (0u64, 0u128);
    let (mut best_t, mut best) = (0usize, f64::NEG_INFINITY);
    for t in 0..256 {
        n0 += hist[t];
        s0 += t as u128 * hist[t] as u128;
        let n1 = n - n0;
        let var = if n0 == 0 || n1 == 0 {
            0.0
        } else {
            let d = (n as i128 * s0 as i128 - n0 as i128 * s as i128) as f64;
            d * d / (n0 as f64 * n1 as f64)
        };
        if var > best {
            best = var;
            best_t = t;
        }
    }
    Threshold {
        t: best_t as u8,
        degenerate: false,
    }
}

pub fn otsu_threshold(img: &GrayImage) -> Threshold {
    otsu_from_histogram(&histogram(img))
}

/// Pore mask: pixels `<= t`, or `> t` when `invert` is set.
pub fn binarize(img: &GrayImage, threshold: Threshold, invert: bool) -> BinaryImage {
    if threshold.degenerate {
        return BinaryImage::empty(img.width, img.height);
    }
    BinaryImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| (v <= threshold.t) != invert).collect(),
    }
}

/// Union of Euclidean disks of `radius` around every foreground pixel.
pub fn dilate(bin: &BinaryImage, radius: usize) -> BinaryImage {
    if radius == 0 {
        return bin.clone();
    }
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let (w, h) = (bin.width as isize, bin.height as isize);
    let mut out = bin.clone();
    for y in 0..h {
        for x in 0..w {
            if !bin.data[(y * w + x) as usize] {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    out.data[(ny * w + nx) as usize] = true;
                }
            }
        }
    }
    out
}

/// Lower envelope of parabolas: exact 1-D squared distance transform.
/// Infinite samples contribute no parabola.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k: isize = -1;
    for q in (0..n).filter(|&q| f[q].is_finite()) {
        let mut s = f64::NEG_INFINITY;
        while k >= 0 {
            let p = v[k as usize];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k as usize] {
                k -= 1;
            } else {
                break;
            }
        }
        if k < 0 {
            s = f64::NEG_INFINITY;
        }
        k += 1;
        v[k as usize] = q;
        z[k as usize] = s;
        z[k as usize + 1] = f64::INFINITY;
    }
    if k < 0 {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from each foreground pixel to the nearest background
/// pixel, with everything outside the image counted as background.
pub fn distance_transform(bin: &BinaryImage) -> Vec<f64> {
    let (w, h) = (bin.width + 2, bin.height + 2);
    let inside = |x: usize, y: usize| x >= 1 && y >= 1 && x <= bin.width && y <= bin.height && bin.get(x - 1, y - 1);
    let mut grid = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            grid[y * w + x] = if inside(x, y) { f64::INFINITY } else { 0.0 };
        }
    }
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut col_out);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        edt_1d(&grid[y * w..(y + 1) * w], &mut row_out);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    let mut out = vec![0.0; bin.width * bin.height];
    for y in 0..bin.height {
        for x in 0..bin.width {
            out[y * bin.width + x] = grid[(y + 1) * w + x + 1].sqrt();
        }
    }
    out
}

/// 8-connected labeling with labels in raster first-touch order.
pub fn label_components(bin: &BinaryImage) -> LabelImage {
    let (w, h) = (bin.width, bin.height);
    let mut labels = vec![0u32; w * h];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !bin.data[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in neighbors8(w, h, i) {
                if bin.data[j] && labels[j] == 0 {
                    labels[j] = count;
                    queue.push_back(j);
                }
            }
        }
    }
    LabelImage {
        width: w,
        height: h,
        labels,
        count,
    }
}

/// Regional maxima of `dist` over the foreground: 8-connected plateaus
/// with no strictly higher neighbor. Returns one pixel list per plateau in
/// raster order of the plateau's first pixel.
pub fn regional_maxima(bin: &BinaryImage, dist: &[f64]) -> Vec<Vec<usize>> {
    let (w, h) = (bin.width, bin.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !bin.data[start] || seen[start] {
            continue;
        }
        let level = dist[start];
        let mut plateau = vec![start];
        let mut is_max = true;
        seen[start] = true;
        let mut k = 0;
        while k < plateau.len() {
            let i = plateau[k];
            k += 1;
            for j in neighbors8(w, h, i) {
                if !bin.data[j] {
                    continue;
                }
                if dist[j] > level {
                    is_max = false;
                } else if dist[j] == level && !seen[j] {
                    seen[j] = true;
                    plateau.push(j);
                }
            }
        }
        if is_max {
            plateau.sort_unstable();
            out.push(plateau);
        }
    }
    out.sort_by_key(|p| p[0]);
    out
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    order: u64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| other.order.cmp(&self.order))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn relabel_raster(labels: &mut [u32]) -> u32 {
    let mut map = std::collections::HashMap::new();
    let mut next = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        *l = *map.entry(*l).or_insert_with(|| {
            next += 1;
            next
        });
    }
    next
}

/// Splits touching pores: markers are the regional maxima of the distance
/// transform, flooded in order of decreasing distance. A pixel reached by
/// several regions joins the one whose marker centroid is nearest, ties to
/// the lower label. Labels are renumbered in raster order.
pub fn watershed_split(bin: &BinaryImage) -> LabelImage {
    let (w, h) = (bin.width, bin.height);
    let dist = distance_transform(bin);
    let markers = regional_maxima(bin, &dist);
    let mut labels = vec![0u32; w * h];
    let centroids: Vec<(f64, f64)> = markers
        .iter()
        .map(|m| {
            let n = m.len() as f64;
            let sx: f64 = m.iter().map(|&i| (i % w) as f64).sum();
            let sy: f64 = m.iter().map(|&i| (i / w) as f64).sum();
            (sx / n, sy / n)
        })
        .collect();
    for (k, m) in markers.iter().enumerate() {
        for &i in m {
            labels[i] = k as u32 + 1;
        }
    }

    let mut queued = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    let mut push = |heap: &mut BinaryHeap<Entry>, queued: &mut [bool], i: usize| {
        queued[i] = true;
        heap.push(Entry {
            dist: dist[i],
            order,
            index: i,
        });
        order += 1;
    };
    for i in 0..w * h {
        if labels[i] != 0 {
            queued[i] = true;
        }
    }
    for i in 0..w * h {
        if labels[i] != 0 {
            for j in neighbors8(w, h, i) {
                if bin.data[j] && !queued[j] {
                    push(&mut heap, &mut queued, j);
                }
            }
        }
    }
    while let Some(Entry { index: i, .. }) = heap.pop() {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let mut best: Option<(f64, u32)> = None;
        for j in neighbors8(w, h, i) {
            let l = labels[j];
            if l == 0 {
                continue;
            }
            let (cx, cy) = centroids[l as usize - 1];
            let d = (x - cx).powi(2) + (y - cy).powi(2);
            best = match best {
                Some((bd, bl)) if bd < d || (bd == d && bl <= l) => Some((bd, bl)),
                _ => Some((d, l)),
            };
        }
        labels[i] = best.expect("queued pixels touch a labeled neighbor").1;
        for j in neighbors8(w, h, i) {
            if bin.data[j] && !queued[j] {
                push(&mut heap, &mut queued, j);
            }
        }
    }
    let count = relabel_raster(&mut labels);
    LabelImage {
        width: w,
        height: h,
        labels,
        count,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pore {
    pub label: u32,
    pub area: usize,
    pub perimeter: usize,
    pub centroid_x: f64,
    pub centroid_y: f64,
    pub equivalent_radius: f64,
}

/// Per-pore geometry plus aggregates. Spreads are population standard
/// deviations over the pores of one image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoreStats {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub porosity_pct: f64,
    pub mean_radius: f64,
    pub std_radius: f64,
    pub mean_perimeter: f64,
    pub std_perimeter: f64,
    #[serde(skip)]
    pub pores: Vec<Pore>,
}

fn mean_pop_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Area is the pixel count; perimeter counts pixel edges that face
/// background or the image border.
pub fn pore_stats(labels: &LabelImage) -> PoreStats {
    let (w, h) = (labels.width, labels.height);
    let k = labels.count as usize;
    let mut area = vec![0usize; k];
    let mut perim = vec![0usize; k];
    let mut sx = vec![0.0f64; k];
    let mut sy = vec![0.0f64; k];
    for y in 0..h {
        for x in 0..w {
            let l = labels.get(x, y) as usize;
            if l == 0 {
                continue;
            }
            let i = l - 1;
            area[i] += 1;
            sx[i] += x as f64;
            sy[i] += y as f64;
            let bg = |nx: isize, ny: isize| {
                nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || labels.get(nx as usize, ny as usize) == 0
            };
            let (xi, yi) = (x as isize, y as isize);
            perim[i] += [(xi - 1, yi), (xi + 1, yi), (xi, yi - 1), (xi, yi + 1)]
                .into_iter()
                .filter(|&(nx, ny)| bg(nx, ny))
                .count();
        }
    }
    let pores: Vec<Pore> = (0..k)
        .map(|i| Pore {
            label: i as u32 + 1,
            area: area[i],
            perimeter: perim[i],
            centroid_x: sx[i] / area[i] as f64,
            centroid_y: sy[i] / area[i] as f64,
            equivalent_radius: (area[i] as f64 / std::f64::consts::PI).sqrt(),
        })
        .collect();
    let total: usize = area.iter().sum();
    let radii: Vec<f64> = pores.iter().map(|p| p.equivalent_radius).collect();
    let perims: Vec<f64> = pores.iter().map(|p| p.perimeter as f64).collect();
    let (mean_radius, std_radius) = mean_pop_std(&radii);
    let (mean_perimeter, std_perimeter) = mean_pop_std(&perims);
    PoreStats {
        width: w,
        height: h,
        count: k,
        porosity_pct: if w * h == 0 {
            0.0
        } else {
            100.0 * total as f64 / (w * h) as f64
        },
        mean_radius,
        std_radius,
        mean_perimeter,
        std_perimeter,
        pores,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanConfig {
    pub margin: usize,
    pub dilate_radius: usize,
    pub invert: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            margin: 0,
            dilate_radius: 1,
            invert: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub threshold: Threshold,
    pub labels: LabelImage,
    pub stats: PoreStats,
}

/// Crop, threshold, dilate, split and measure one image.
pub fn scan(img: &GrayImage, cfg: &ScanConfig) -> Result<ScanResult> {
    let cropped = crop_borders(img, cfg.margin)?;
    let threshold = otsu_threshold(&cropped);
    let mask = dilate(&binarize(&cropped, threshold, cfg.invert), cfg.dilate_radius);
    let labels = watershed_split(&mask);
    let stats = pore_stats(&labels);
    Ok(ScanResult {
        threshold,
        labels,
        stats,
    })
}

/// Reads an 8-bit single-channel PGM or PNG.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            GrayImage::new(w as usize, h as usize, buf.into_raw())
        }
        other => Err(Error::Image(format!(
            "{}: expected 8-bit grayscale, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("buffer matches dimensions");
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(e) if e == "png" => image::ImageFormat::Png,
        _ => image::ImageFormat::Pnm,
    };
    buf.save_with_format(path, format)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Label map as a graymap: background 0, labels cycled through 1..=255.
pub fn label_image_gray(labels: &LabelImage) -> GrayImage {
    let data = labels
        .labels
        .iter()
        .map(|&l| if l == 0 { 0 } else { ((l - 1) % 255 + 1) as u8 })
        .collect();
    GrayImage {
        width: labels.width,
        height: labels.height,
        data,
    }
}

/// Outcome for one file in a batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileScan {
    pub file: String,
    pub threshold: Option<Threshold>,
    pub stats: Option<PoreStats>,
    pub error: Option<String>,
    #[serde(skip)]
    pub labels: Option<LabelImage>,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "pnm" | "png")
    )
}

/// Image files under `path`: the file itself, or a directory's PGM/PNG
/// entries sorted by name.
pub fn collect_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        if p.is_file() && is_image(&p) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Scans every file, recording per-file failures instead of stopping.
pub fn scan_files(files: &[PathBuf], cfg: &ScanConfig) -> Vec<FileScan> {
    par::map(files.to_vec(), |p| {
        let file = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        match load_gray(&p).and_then(|img| scan(&img, cfg)) {
            Ok(r) => FileScan {
                file,
                threshold: Some(r.threshold),
                stats: Some(r.stats),
                error: None,
                labels: Some(r.labels),
            },
            Err(e) => FileScan {
                file,
                threshold: None,
                stats: None,
                error: Some(e.to_string()),
                labels: None,
            },
        }
    })
}

/// One row per pore, keyed by file.
pub fn write_pores_csv<W: Write>(scans: &[FileScan], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["file", "label", "area", "perimeter", "centroid_x", "centroid_y", "equivalent_radius"])?;
    for s in scans {
        for p in s.stats.iter().flat_map(|st| &st.pores) {
            wtr.write_record([
                s.file.as_str(),
                &p.label.to_string(),
                &p.area.to_string(),
                &p.perimeter.to_string(),
                &g6(p.centroid_x),
                &g6(p.centroid_y),
                &g6(p.equivalent_radius),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// One row per file with the aggregate block, or the error message.
pub fn write_summary_csv<W: Write>(scans: &[FileScan], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "file",
        "threshold",
        "degenerate",
        "count",
        "porosity_pct",
        "mean_radius",
        "std_radius",
        "mean_perimeter",
        "std_perimeter",
        "error",
    ])?;
    for s in scans {
        let mut rec = vec![s.file.clone()];
        match (&s.threshold, &s.stats) {
            (Some(t), Some(st)) => rec.extend([
                t.t.to_string(),
                t.degenerate.to_string(),
                st.count.to_string(),
                g6(st.porosity_pct),
                g6(st.mean_radius),
                g6(st.std_radius),
                g6(st.mean_perimeter),
                g6(st.std_perimeter),
                String::new(),
            ]),
            _ => {
                rec.extend(std::iter::repeat_n(String::new(), 8));
                rec.push(s.error.clone().unwrap_or_default());
            }
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
