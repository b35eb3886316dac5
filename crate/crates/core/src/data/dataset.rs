//! On-disk paired datasets: `root/{train,val,test}/NNNNN.ppm` holding the
//! targets, plus `manifest.txt`. Conditions are recomputed from the task.

use std::fmt::Write as _;
use std::path::Path;

use super::{box_downsample, synthetic_set, Image, Task};
use crate::error::{Error, Result};
use crate::tensor::{Element, Rng, Tensor};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub task: Task,
    pub seed: u64,
    pub counts: [usize; 3],
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("task = {}\nseed = {}\n", self.task, self.seed);
        for (name, n) in SPLITS.iter().zip(self.counts) {
            writeln!(s, "{name} = {n}").expect("write to string");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut task, mut seed, mut counts) = (None, None, [None; 3]);
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::Dataset(format!("manifest line {}: {m}", k + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "task" => task = Some(value.parse().map_err(|_| bad("unknown task"))?),
                "seed" => seed = Some(value.parse().map_err(|_| bad("bad seed"))?),
                _ => {
                    let i = SPLITS
                        .iter()
                        .position(|s| *s == key)
                        .ok_or_else(|| bad("unknown key"))?;
                    counts[i] = Some(value.parse().map_err(|_| bad("bad count"))?);
                }
            }
        }
        let missing = |k: &str| Error::Dataset(format!("manifest is missing {k}"));
        Ok(Self {
            task: task.ok_or_else(|| missing("task"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            counts: [
                counts[0].ok_or_else(|| missing("train"))?,
                counts[1].ok_or_else(|| missing("val"))?,
                counts[2].ok_or_else(|| missing("test"))?,
            ],
        })
    }
}

/// Partitions `0..n` by a seeded shuffle into train/val/test index lists.
pub fn split_indices(n: usize, val: usize, test: usize, seed: u64) -> Result<[Vec<usize>; 3]> {
    if val + test > n {
        return Err(Error::Dataset(format!(
            "cannot hold out {} of {n} items",
            val + test
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::with_stream(seed, 0x5EED).shuffle(&mut idx);
    let test_set = idx.split_off(n - test);
    let val_set = idx.split_off(n - test - val);
    Ok([idx, val_set, test_set])
}

/// Paired images `(y, w)` of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSet {
    pub task: Task,
    pub conditions: Vec<Image>,
    pub targets: Vec<Image>,
}

impl PairedSet {
    pub fn from_targets(task: Task, targets: Vec<Image>) -> Result<Self> {
        let conditions = targets
            .iter()
            .map(|w| task.make_condition(w))
            .collect::<Result<_>>()?;
        Ok(Self {
            task,
            conditions,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Stacks the selected pairs into `(w, y)` tensors of pixel values.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let w: Vec<Tensor<T>> = indices
            .iter()
            .map(|&i| self.targets[i].to_tensor())
            .collect();
        let y: Vec<Tensor<T>> = indices
            .iter()
            .map(|&i| self.conditions[i].to_tensor())
            .collect();
        Ok((Tensor::stack(&w)?, Tensor::stack(&y)?))
    }

    /// Like [`PairedSet::batch`] with target `indices[k]` transformed by
    /// [`Image::dihedral`]`(transforms[k])` and its condition rebuilt from
    /// the transformed target.
    pub fn transformed_batch<T: Element>(
        &self,
        indices: &[usize],
        transforms: &[u8],
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if indices.len() != transforms.len() {
            return Err(Error::InvalidArgument(
                "one transform per index required".into(),
            ));
        }
        let mut w = Vec::with_capacity(indices.len());
        let mut y = Vec::with_capacity(indices.len());
        for (&i, &k) in indices.iter().zip(transforms) {
            let t = self.targets[i].dihedral(k)?;
            y.push(self.task.make_condition(&t)?.to_tensor());
            w.push(t.to_tensor());
        }
        Ok((Tensor::stack(&w)?, Tensor::stack(&y)?))
    }
}

/// A synthetic dataset split by seed.
pub fn synthetic_dataset(
    task: Task,
    counts: [usize; 3],
    size: usize,
    channels: usize,
    seed: u64,
) -> Result<[PairedSet; 3]> {
    let total: usize = counts.iter().sum();
    let images = synthetic_set(total, size, channels, seed);
    let parts = split_indices(total, counts[1], counts[2], seed)?;
    let mut sets = parts.into_iter().map(|idx| {
        PairedSet::from_targets(task, idx.into_iter().map(|i| images[i].clone()).collect())
    });
    Ok([
        sets.next().expect("3 splits")?,
        sets.next().expect("3 splits")?,
        sets.next().expect("3 splits")?,
    ])
}

/// Central square crop whose side is the largest multiple of `size` that fits
/// the shorter edge, box-downsampled to `size × size`.
pub fn center_crop_resize(img: &Image, size: usize) -> Result<Image> {
    let side = img.width.min(img.height) / size.max(1) * size;
    if size == 0 || side == 0 {
        return Err(Error::Dataset(format!(
            "{}x{} image is smaller than {size}x{size}",
            img.width, img.height
        )));
    }
    let (x0, y0) = ((img.width - side) / 2, (img.height - side) / 2);
    let mut crop = Image::filled(side, side, img.channels, 0);
    for y in 0..side {
        for x in 0..side {
            for c in 0..img.channels {
                crop.set(x, y, c, img.get(x0 + x, y0 + y, c));
            }
        }
    }
    box_downsample(&crop, side / size)
}

/// Reads every `.ppm` in `dir` in name order, crops and resizes each with
/// [`center_crop_resize`] and splits the result by seed. All but `val + test`
/// images go to the training split.
pub fn ingest_images(
    task: Task,
    dir: &Path,
    size: usize,
    channels: usize,
    val: usize,
    test: usize,
    seed: u64,
) -> Result<(Manifest, [PairedSet; 3])> {
    let raw = read_ppm_files(dir)?;
    let mut images = Vec::with_capacity(raw.len());
    for img in &raw {
        if img.channels != channels {
            return Err(Error::Dataset(format!(
                "expected {channels}-channel images, found {} channels",
                img.channels
            )));
        }
        images.push(center_crop_resize(img, size)?);
    }
    let n = images.len();
    let parts = split_indices(n, val, test, seed)?;
    let counts = [parts[0].len(), parts[1].len(), parts[2].len()];
    let mut sets = parts.into_iter().map(|idx| {
        PairedSet::from_targets(task, idx.into_iter().map(|i| images[i].clone()).collect())
    });
    let sets = [
        sets.next().expect("3 splits")?,
        sets.next().expect("3 splits")?,
        sets.next().expect("3 splits")?,
    ];
    Ok((Manifest { task, seed, counts }, sets))
}

pub fn write_dataset(root: &Path, manifest: &Manifest, splits: &[PairedSet; 3]) -> Result<()> {
    for (name, set) in SPLITS.iter().zip(splits) {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir)?;
        for (k, img) in set.targets.iter().enumerate() {
            img.write(&dir.join(format!("{k:05}.ppm")))?;
        }
    }
    std::fs::write(root.join("manifest.txt"), manifest.to_text())?;
    Ok(())
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(root.join("manifest.txt"))
        .map_err(|e| Error::Dataset(format!("{}: {e}", root.join("manifest.txt").display())))?;
    Manifest::parse(&text)
}

/// Reads the `.ppm` files of one split directory in name order.
pub fn read_split_dir(dir: &Path, task: Task) -> Result<PairedSet> {
    PairedSet::from_targets(task, read_ppm_files(dir)?)
}

fn read_ppm_files(dir: &Path) -> Result<Vec<Image>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| Image::read(p).map_err(|e| Error::Dataset(format!("{}: {e}", p.display()))))
        .collect()
}

pub fn read_dataset(root: &Path) -> Result<(Manifest, [PairedSet; 3])> {
    let m = read_manifest(root)?;
    let read = |k: usize| read_split_dir(&root.join(SPLITS[k]), m.task);
    let sets = [read(0)?, read(1)?, read(2)?];
    for (k, s) in sets.iter().enumerate() {
        if s.len() != m.counts[k] {
            return Err(Error::Dataset(format!(
                "{} split has {} images, manifest says {}",
                SPLITS[k],
                s.len(),
                m.counts[k]
            )));
        }
    }
    Ok((m, sets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_partition_and_reproducible() {
        let [a, b, c] = split_indices(20, 3, 4, 9).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (13, 3, 4));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(split_indices(20, 3, 4, 9).unwrap(), [a, b, c]);
        assert!(split_indices(5, 3, 3, 0).is_err());
    }

    #[test]
    fn center_crop_keeps_the_middle() {
        // 6x4 image whose value is its column index; crop side 4 starts at x = 1.
        let data = (0..4).flat_map(|_| 0..6u8).collect();
        let img = Image::new(6, 4, 1, data).unwrap();
        let out = center_crop_resize(&img, 2).unwrap();
        assert_eq!((out.width, out.height), (2, 2));
        // Blocks cover columns {1, 2} and {3, 4}: means 1.5 and 3.5 round to 2 and 4.
        assert_eq!(out.data, vec![2, 4, 2, 4]);
        assert!(center_crop_resize(&img, 5).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            task: Task::Inpaint,
            seed: 17,
            counts: [10, 2, 3],
        };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("task = inpaint25\n").is_err());
    }

    #[test]
    fn batch_stacks_pairs() {
        let [train, _, _] = synthetic_dataset(Task::Colorize, [4, 1, 1], 8, 3, 0).unwrap();
        let (w, y) = train.batch::<f32>(&[2, 0]).unwrap();
        assert_eq!(w.shape(), [2, 3, 8, 8]);
        assert_eq!(y.batch_item(0), train.conditions[2].to_tensor());
    }
}
