//! Synthetic Gaussian-blob image classes: a desk-scale stand-in for
//! real image benchmarks. Each class is defined by a random template
//! image; samples are the template plus isotropic Gaussian noise.

use super::{normalize_per_channel, Dataset};
use crate::error::{Error, Result};
use crate::numcore::{stream_id, Rng};

const TEMPLATE_STREAM: u64 = 0xB10B_0001;
const NOISE_STREAM: u64 = 0xB10B_0002;

/// Generates `class_count * per_class` labeled images of shape
/// `channels x side x side`. `spread` is the noise std around each class
/// template (template pixels are standard normal). Deterministic per seed.
pub fn make_blobs(
    class_count: usize,
    channels: usize,
    side: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if class_count < 2 {
        return Err(Error::Domain(format!(
            "make_blobs needs >= 2 classes, got {class_count}"
        )));
    }
    if side < 8 {
        return Err(Error::Domain(format!("make_blobs needs side >= 8, got {side}")));
    }
    if channels == 0 || per_class == 0 {
        return Err(Error::Domain(
            "make_blobs needs >= 1 channel and >= 1 sample per class".into(),
        ));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::Domain(format!(
            "make_blobs spread must be finite and >= 0, got {spread}"
        )));
    }

    let image_len = channels * side * side;
    let mut templates = vec![0.0; class_count * image_len];
    let mut template_rng = Rng::new(seed, stream_id(&[TEMPLATE_STREAM]));
    for v in &mut templates {
        *v = template_rng.normal();
    }

    let n = class_count * per_class;
    let mut images = vec![0.0; n * image_len];
    let mut labels = vec![0usize; n];
    let mut noise_rng = Rng::new(seed, stream_id(&[NOISE_STREAM]));
    for class in 0..class_count {
        let template = &templates[class * image_len..(class + 1) * image_len];
        for s in 0..per_class {
            let i = class * per_class + s;
            labels[i] = class;
            let img = &mut images[i * image_len..(i + 1) * image_len];
            for (dst, &t) in img.iter_mut().zip(template) {
                *dst = t + spread * noise_rng.normal();
            }
        }
    }

    let (norm_mean, norm_std) = normalize_per_channel(&mut images, n, channels, side);
    let dataset = Dataset {
        images,
        labels,
        class_count,
        channels,
        side,
        norm_mean,
        norm_std,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Generates one blob population and splits it class-wise into a
/// training pool and a held-out test set. Both halves share the class
/// templates and the pooled normalization statistics, so the test set
/// is drawn from exactly the training distribution.
pub fn make_blobs_split(
    class_count: usize,
    channels: usize,
    side: usize,
    train_per_class: usize,
    test_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if train_per_class == 0 || test_per_class == 0 {
        return Err(Error::Domain(
            "make_blobs_split needs >= 1 train and >= 1 test sample per class".into(),
        ));
    }
    let full = make_blobs(
        class_count,
        channels,
        side,
        train_per_class + test_per_class,
        spread,
        seed,
    )?;
    let image_len = channels * side * side;
    let block = train_per_class + test_per_class;
    let carve = |offset: usize, count: usize| -> Dataset {
        let mut images = Vec::with_capacity(class_count * count * image_len);
        let mut labels = Vec::with_capacity(class_count * count);
        for class in 0..class_count {
            for s in 0..count {
                let i = class * block + offset + s;
                images.extend_from_slice(full.image(i));
                labels.push(full.labels[i]);
            }
        }
        Dataset {
            images,
            labels,
            class_count,
            channels,
            side,
            norm_mean: full.norm_mean.clone(),
            norm_std: full.norm_std.clone(),
        }
    };
    let train = carve(0, train_per_class);
    let test = carve(train_per_class, test_per_class);
    Ok((train, test))
}
