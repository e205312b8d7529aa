//! Crop classification and overlay rendering: each face box is cropped,
//! rescaled to the backbone input size, classified by the head, and drawn
//! back onto the image — green for mask, red for no mask — with the
//! confidence percentage printed above the box in an embedded 5×7 bitmap
//! font.
//!
//! Face detection itself is out of scope; boxes arrive from a JSON-lines
//! file (one `{"image": …, "boxes": [[x,y,w,h], …]}` object per line).

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use crate::augment::rescale;
use crate::backbone::{Backbone, BUILTIN_INPUT_SIDE};
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::nnhead::{argmax, head_forward_eval, HeadParameters};

/// Axis-aligned box; `x`/`y` is the top-left corner and may lie outside the
/// image (the used region is clamped to the image bounds).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceBox {
    x: i64,
    y: i64,
    w: u32,
    h: u32,
}

impl FaceBox {
    pub fn new(x: i64, y: i64, w: u32, h: u32) -> Result<FaceBox> {
        if w == 0 || h == 0 {
            return Err(Error::config(format!(
                "face box at ({x},{y}) must have positive size, got {w}x{h}"
            )));
        }
        Ok(FaceBox { x, y, w, h })
    }

    pub fn x(&self) -> i64 {
        self.x
    }

    pub fn y(&self) -> i64 {
        self.y
    }

    pub fn w(&self) -> u32 {
        self.w
    }

    pub fn h(&self) -> u32 {
        self.h
    }

    /// Intersection with an image of the given size, as inclusive pixel
    /// bounds; `None` when the box lies fully outside.
    fn clamped(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + self.w as i64 - 1).min(width as i64 - 1);
        let y1 = (self.y + self.h as i64 - 1).min(height as i64 - 1);
        if x0 > x1 || y0 > y1 {
            None
        } else {
            Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
        }
    }
}

/// One classified crop.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub face_box: FaceBox,
    pub label: Label,
    /// Largest softmax probability; at least 0.5 for a 2-class argmax.
    pub confidence: f64,
}

/// Classifies every box in order: clamp, crop, rescale to the backbone
/// input size, eval-mode forward, argmax.
///
/// `image_key` names the source image for embedding lookups; crop `k` is
/// fetched under the key `<image_key>#crop<k>`.
pub fn classify_crops(
    img: &ImageBuffer,
    boxes: &[FaceBox],
    backbone: &Backbone,
    params: &HeadParameters,
    image_key: &str,
) -> Result<Vec<Detection>> {
    if boxes.is_empty() {
        return Err(Error::config("no face boxes supplied"));
    }
    let mut detections = Vec::with_capacity(boxes.len());
    for (k, face_box) in boxes.iter().enumerate() {
        let (x0, y0, x1, y1) = face_box.clamped(img.width(), img.height()).ok_or_else(|| {
            Error::config(format!(
                "box {k} ({},{} {}x{}) lies fully outside the {}x{} image",
                face_box.x,
                face_box.y,
                face_box.w,
                face_box.h,
                img.width(),
                img.height()
            ))
        })?;
        let crop = crop_region(img, x0, y0, x1, y1);
        let scaled = rescale(&crop, BUILTIN_INPUT_SIDE, BUILTIN_INPUT_SIDE)?;
        let features = backbone.features_for_image(&format!("{image_key}#crop{k}"), &scaled)?;
        let trace = head_forward_eval(&features, params)?;
        let probs = trace.probs();
        let winner = argmax(probs);
        detections.push(Detection {
            face_box: *face_box,
            label: Label::from_index(winner),
            confidence: probs[winner] as f64,
        });
    }
    Ok(detections)
}

fn crop_region(img: &ImageBuffer, x0: usize, y0: usize, x1: usize, y1: usize) -> ImageBuffer {
    let (cw, ch, c) = (x1 - x0 + 1, y1 - y0 + 1, img.channels());
    let mut data = Vec::with_capacity(cw * ch * c);
    for y in y0..=y1 {
        for x in x0..=x1 {
            for ch_i in 0..c {
                data.push(img.sample(x, y, ch_i));
            }
        }
    }
    ImageBuffer::from_raw(cw, ch, c, data).expect("crop dims are valid")
}

const MASK_COLOR: [u8; 3] = [0, 255, 0];
const NO_MASK_COLOR: [u8; 3] = [255, 0, 0];
const BORDER: i64 = 3;
const GLYPH_SCALE: i64 = 2;
const GLYPH_ADVANCE: i64 = 6 * GLYPH_SCALE;

/// 5×7 glyphs for '0'..'9' and '%', one u8 per row, low 5 bits used,
/// bit 4 = leftmost column.
fn glyph(ch: char) -> Option<[u8; 7]> {
    let rows = match ch {
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        '%' => [0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011],
        _ => return None,
    };
    Some(rows)
}

fn paint(img: &mut ImageBuffer, x: i64, y: i64, color: [u8; 3]) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    for (c, &v) in color.iter().enumerate() {
        img.set_sample(x as usize, y as usize, c, v);
    }
}

fn draw_text(img: &mut ImageBuffer, text: &str, left: i64, top: i64, color: [u8; 3]) {
    let mut pen_x = left;
    for ch in text.chars() {
        if let Some(rows) = glyph(ch) {
            for (row, bits) in rows.iter().enumerate() {
                for col in 0..5i64 {
                    if bits & (1 << (4 - col)) == 0 {
                        continue;
                    }
                    for dy in 0..GLYPH_SCALE {
                        for dx in 0..GLYPH_SCALE {
                            paint(
                                img,
                                pen_x + col * GLYPH_SCALE + dx,
                                top + row as i64 * GLYPH_SCALE + dy,
                                color,
                            );
                        }
                    }
                }
            }
        }
        pen_x += GLYPH_ADVANCE;
    }
}

fn draw_box(img: &mut ImageBuffer, det: &Detection) {
    let color = match det.label {
        Label::Mask => MASK_COLOR,
        Label::NoMask => NO_MASK_COLOR,
    };
    let (x0, y0) = (det.face_box.x, det.face_box.y);
    let x1 = x0 + det.face_box.w as i64 - 1;
    let y1 = y0 + det.face_box.h as i64 - 1;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let edge_distance = (x - x0).min(x1 - x).min(y - y0).min(y1 - y);
            if edge_distance < BORDER {
                paint(img, x, y, color);
            }
        }
    }
    let percent = (det.confidence * 100.0).round() as u32;
    draw_text(img, &format!("{percent}%"), x0, y0 - 16, color);
}

/// Draws each detection onto a copy of the 3-channel image in input order
/// (later boxes paint over earlier ones): a 3-pixel border band inside the
/// box perimeter, green `(0,255,0)` for MASK and red `(255,0,0)` for
/// NO_MASK, and the rounded confidence as `NN%` above the top-left corner.
pub fn render_overlay(img: &ImageBuffer, detections: &[Detection]) -> Result<ImageBuffer> {
    if img.channels() != 3 {
        return Err(Error::image("overlay rendering needs a 3-channel image"));
    }
    let mut out = img.clone();
    for det in detections {
        draw_box(&mut out, det);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct BoxesLine {
    image: String,
    boxes: Vec<[i64; 4]>,
}

/// Reads a JSON-lines boxes file: one `{"image": <path>, "boxes":
/// [[x,y,w,h], …]}` object per non-empty line. Entries keep file order;
/// duplicate image paths and non-positive box sizes are rejected with their
/// line number.
pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<FaceBox>)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: BoxesLine = serde_json::from_str(line).map_err(|e| Error::Boxes {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut boxes = Vec::with_capacity(parsed.boxes.len());
        for [x, y, w, h] in parsed.boxes {
            let fits = (1..=i64::from(u32::MAX)).contains(&w) && (1..=i64::from(u32::MAX)).contains(&h);
            if !fits {
                return Err(Error::Boxes {
                    line: line_no,
                    message: format!("box [{x},{y},{w},{h}] must have positive width and height"),
                });
            }
            boxes.push(FaceBox::new(x, y, w as u32, h as u32)?);
        }
        if !seen.insert(parsed.image.clone()) {
            return Err(Error::Boxes {
                line: line_no,
                message: format!("duplicate image entry {:?}", parsed.image),
            });
        }
        entries.push((parsed.image, boxes));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{EmbeddingStore, FeatureMap};
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_boxes(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boxes.jsonl");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn read_boxes_parses_entries_in_order() {
        let (_dir, path) = write_boxes(
            r#"{"image": "a.ppm", "boxes": [[1,2,30,40],[5,5,10,10]]}

{"image": "b.ppm", "boxes": [[0,0,8,8]]}
"#,
        );
        let entries = read_boxes(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].0, "a.ppm");
        assert_eq!(entries[0].1.len(), 2);
        assert_eq!(entries[0].1[0], FaceBox::new(1, 2, 30, 40).unwrap());
        assert_eq!(entries[1].0, "b.ppm");
    }

    #[test]
    fn read_boxes_rejects_zero_size_with_line_number() {
        let (_dir, path) = write_boxes(
            "{\"image\": \"a.ppm\", \"boxes\": [[1,1,5,5]]}\n{\"image\": \"b.ppm\", \"boxes\": [[5,5,0,10]]}\n",
        );
        let err = read_boxes(&path).unwrap_err();
        assert!(matches!(err, Error::Boxes { line: 2, .. }), "{err}");
    }

    #[test]
    fn read_boxes_rejects_duplicates_and_bad_json() {
        let (_dir, path) = write_boxes(
            "{\"image\": \"a.ppm\", \"boxes\": [[1,1,5,5]]}\n{\"image\": \"a.ppm\", \"boxes\": [[1,1,5,5]]}\n",
        );
        let err = read_boxes(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let (_dir2, path2) = write_boxes("not json\n");
        assert!(matches!(read_boxes(&path2), Err(Error::Boxes { line: 1, .. })));
    }

    #[test]
    fn read_boxes_empty_file_is_empty() {
        let (_dir, path) = write_boxes("");
        assert!(read_boxes(&path).unwrap().is_empty());
    }

    fn zero_logit_params(flattened_dim: usize) -> HeadParameters {
        HeadParameters::from_tensors(
            flattened_dim,
            2,
            2,
            vec![0.0; flattened_dim * 2],
            vec![0.0; 2],
            vec![0.0; 4],
            vec![0.0; 2],
        )
        .unwrap()
    }

    /// Embedding-backed fixture: crop k of "scene.ppm" maps to a constant
    /// feature map whose sign encodes the wanted class.
    fn crop_fixture(signs: &[f32]) -> (Backbone, HeadParameters) {
        let dims = (5, 5, 1);
        let mut store = EmbeddingStore::new(dims);
        for (k, &sign) in signs.iter().enumerate() {
            store
                .insert(
                    format!("scene.ppm#crop{k}"),
                    FeatureMap::new(5, 5, 1, vec![sign; 25]).unwrap(),
                )
                .unwrap();
        }
        let params = HeadParameters::from_tensors(
            1,
            2,
            2,
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![10.0, -10.0, 0.0, 0.0],
            vec![-5.0, 0.0],
        )
        .unwrap();
        (Backbone::Embedding(store), params)
    }

    fn checkerboard(w: usize, h: usize) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut data = vec![0u8; w * h * 3];
        rng.fill_bytes(&mut data);
        ImageBuffer::from_raw(w, h, 3, data).unwrap()
    }

    #[test]
    fn classify_orders_and_separates_crops() {
        let (backbone, params) = crop_fixture(&[1.0, -1.0]);
        let img = checkerboard(64, 48);
        let boxes = [
            FaceBox::new(2, 2, 20, 20).unwrap(),
            FaceBox::new(30, 10, 20, 20).unwrap(),
        ];
        let dets = classify_crops(&img, &boxes, &backbone, &params, "scene.ppm").unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].label, Label::Mask);
        assert_eq!(dets[1].label, Label::NoMask);
        assert!(dets[0].confidence > 0.99);
        assert!(dets[1].confidence > 0.99);
        assert_eq!(dets[0].face_box, boxes[0]);

        let again = classify_crops(&img, &boxes, &backbone, &params, "scene.ppm").unwrap();
        assert_eq!(again, dets);
    }

    #[test]
    fn classify_clamps_partial_boxes_and_rejects_outside() {
        let (backbone, params) = crop_fixture(&[1.0]);
        let img = checkerboard(40, 40);
        // Hangs off the top-left corner but still overlaps.
        let partial = [FaceBox::new(-10, -10, 20, 20).unwrap()];
        let dets = classify_crops(&img, &partial, &backbone, &params, "scene.ppm").unwrap();
        assert_eq!(dets.len(), 1);

        let outside = [FaceBox::new(100, 100, 5, 5).unwrap()];
        let err = classify_crops(&img, &outside, &backbone, &params, "scene.ppm").unwrap_err();
        assert!(err.to_string().contains("box 0"), "{err}");

        assert!(classify_crops(&img, &[], &backbone, &params, "scene.ppm").is_err());
    }

    #[test]
    fn zero_logits_give_half_confidence_mask() {
        let dims = (5, 5, 1);
        let mut store = EmbeddingStore::new(dims);
        store
            .insert("scene.ppm#crop0", FeatureMap::new(5, 5, 1, vec![0.3; 25]).unwrap())
            .unwrap();
        let params = zero_logit_params(1);
        let img = checkerboard(32, 32);
        let dets = classify_crops(
            &img,
            &[FaceBox::new(0, 0, 32, 32).unwrap()],
            &Backbone::Embedding(store),
            &params,
            "scene.ppm",
        )
        .unwrap();
        assert_eq!(dets[0].confidence, 0.5);
        assert_eq!(dets[0].label, Label::Mask);
    }

    #[test]
    fn render_empty_list_is_identity() {
        let img = checkerboard(30, 20);
        let out = render_overlay(&img, &[]).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn render_rejects_single_channel() {
        let img = ImageBuffer::filled(10, 10, 1, 7).unwrap();
        assert!(render_overlay(&img, &[]).is_err());
    }

    fn det(x: i64, y: i64, w: u32, h: u32, label: Label) -> Detection {
        Detection {
            face_box: FaceBox::new(x, y, w, h).unwrap(),
            label,
            confidence: 0.5,
        }
    }

    #[test]
    fn render_draws_exact_border_colors() {
        let img = ImageBuffer::filled(100, 100, 3, 10).unwrap();
        let out = render_overlay(&img, &[det(10, 30, 50, 50, Label::Mask)]).unwrap();
        let px = |x: usize, y: usize| [out.sample(x, y, 0), out.sample(x, y, 1), out.sample(x, y, 2)];
        // Corners and band interior are exactly green.
        assert_eq!(px(10, 30), MASK_COLOR);
        assert_eq!(px(59, 79), MASK_COLOR);
        assert_eq!(px(12, 32), MASK_COLOR);
        // One past the 3-pixel band is untouched.
        assert_eq!(px(13, 33), [10, 10, 10]);
        // Center untouched.
        assert_eq!(px(35, 55), [10, 10, 10]);
        // No red anywhere for a single green detection.
        for y in 0..100 {
            for x in 0..100 {
                assert_ne!(px(x, y), NO_MASK_COLOR);
            }
        }
    }

    #[test]
    fn render_text_pixels_appear_above_box() {
        let img = ImageBuffer::filled(100, 100, 3, 0).unwrap();
        let out = render_overlay(&img, &[det(10, 30, 40, 40, Label::NoMask)]).unwrap();
        // "50%": the glyph '5' has its top-left bit set, drawn at 2x scale
        // starting 16 rows above the box.
        assert_eq!(
            [out.sample(10, 14, 0), out.sample(10, 14, 1), out.sample(10, 14, 2)],
            NO_MASK_COLOR
        );
    }

    #[test]
    fn render_later_detections_paint_over_earlier() {
        let img = ImageBuffer::filled(60, 60, 3, 0).unwrap();
        let out = render_overlay(
            &img,
            &[
                det(5, 5, 30, 30, Label::Mask),
                det(5, 5, 30, 30, Label::NoMask),
            ],
        )
        .unwrap();
        assert_eq!(
            [out.sample(5, 5, 0), out.sample(5, 5, 1), out.sample(5, 5, 2)],
            NO_MASK_COLOR
        );
    }

    #[test]
    fn render_preserves_input_and_dims() {
        let img = checkerboard(48, 36);
        let before = img.clone();
        let out = render_overlay(&img, &[det(-5, -5, 20, 20, Label::Mask)]).unwrap();
        assert_eq!(img, before);
        assert_eq!((out.width(), out.height(), out.channels()), (48, 36, 3));
    }
}
