//! In-memory labeled image sets shared by training, stylization and
//! verification.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

/// Images (each `C×H×W`) with class labels and split assignments.
#[derive(Clone, Debug)]
pub struct LabeledImages<T> {
    pub classes: Vec<String>,
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

impl<T: Real> LabeledImages<T> {
    pub fn new(classes: Vec<String>) -> Self {
        LabeledImages {
            classes,
            images: Vec::new(),
            labels: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn push(&mut self, image: Tensor<T>, label: usize, split: Split) -> Result<()> {
        if label >= self.classes.len() {
            return Err(Error::Label(format!("label {label} outside {} classes", self.classes.len())));
        }
        if let Some(first) = self.images.first() {
            if first.shape() != image.shape() {
                return Err(Error::dim(
                    "LabeledImages::push",
                    format!("image {:?} differs from {:?}", image.shape(), first.shape()),
                ));
            }
        }
        self.images.push(image);
        self.labels.push(label);
        self.splits.push(split);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes.iter().position(|c| c == name).ok_or_else(|| Error::Lookup {
            kind: "class",
            name: name.to_string(),
        })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Stacks the selected images into an `N×C×H×W` batch.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.images[i]).collect();
        Tensor::stack(&refs)
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Endless stream of shuffled minibatches over a fixed index set.
#[derive(Clone, Debug)]
pub struct BatchStream {
    pool: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl BatchStream {
    pub fn new(pool: Vec<usize>, batch: usize) -> Result<Self> {
        if pool.len() < batch || batch == 0 {
            return Err(Error::Config(format!("cannot draw batches of {batch} from {} items", pool.len())));
        }
        Ok(BatchStream {
            order: Vec::new(),
            pool,
            cursor: 0,
            batch,
        })
    }

    /// Next batch; reshuffles when the current pass cannot fill one.
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.order = self.pool.clone();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}
