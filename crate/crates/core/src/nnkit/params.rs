use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Handle to a parameter block inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named row-major matrix of parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Block {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    blocks: Vec<Block>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    ) -> ParamId {
        assert_eq!(
            data.len(),
            rows * cols,
            "block data does not match its shape"
        );
        self.blocks.push(Block {
            name: name.into(),
            rows,
            cols,
            data,
        });
        ParamId(self.blocks.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Block {
        &self.blocks[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Block {
        &mut self.blocks[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.blocks.len()).map(ParamId)
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self
            .blocks
            .iter()
            .find(|b| b.data.iter().any(|v| !v.is_finite()))
        {
            Some(b) => Err(Error::Numeric {
                block: b.name.clone(),
            }),
            None => Ok(()),
        }
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    blocks: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Grads {
            blocks: params
                .blocks
                .iter()
                .map(|b| vec![0.0; b.data.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.blocks[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.blocks.iter_mut().flatten() {
            *v *= c;
        }
    }
}
