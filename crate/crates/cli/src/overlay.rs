//! Minimal result drawing: model points and their bounding box.

use image::{Rgb, RgbImage};
use shapetrack::bench::bbox_from_model;
use shapetrack::imaging::GrayImage;
use shapetrack::model::ShapeModel;
use shapetrack::tracker::FrameResult;

const TRACKED: Rgb<u8> = Rgb([0, 230, 0]);
const LOST: Rgb<u8> = Rgb([230, 0, 0]);
const BOX: Rgb<u8> = Rgb([255, 210, 0]);

pub fn render(frame: &GrayImage, model: &ShapeModel, result: &FrameResult) -> RgbImage {
    let gray = frame.to_luma8();
    let mut img = RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let v = gray.get_pixel(x, y).0[0];
        Rgb([v, v, v])
    });
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut put = |x: i64, y: i64, c: Rgb<u8>| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, c);
        }
    };
    let b = bbox_from_model(model, &result.pose);
    let (x0, y0) = (b.x.round() as i64, b.y.round() as i64);
    let (x1, y1) = ((b.x + b.w).round() as i64, (b.y + b.h).round() as i64);
    for x in x0..=x1 {
        put(x, y0, BOX);
        put(x, y1, BOX);
    }
    for y in y0..=y1 {
        put(x0, y, BOX);
        put(x1, y, BOX);
    }
    let color = if result.status.is_tracked() { TRACKED } else { LOST };
    for p in &model.points {
        let q = result.pose.transform_point(p.p);
        put(q.x.round() as i64, q.y.round() as i64, color);
    }
    img
}
