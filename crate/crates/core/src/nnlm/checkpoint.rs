use std::path::Path;

use super::{LanguageModel, ModelConfig, ParamStore};
use crate::autograd::Tensor;
use crate::container::{Container, Record};
use crate::error::{Error, Result};

impl ModelConfig {
    pub(crate) fn to_fields(&self) -> Vec<(String, String)> {
        let span = self
            .attention_span
            .map_or_else(|| "none".to_owned(), |s| s.to_string());
        [
            ("arch", self.arch.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("attention_span", span),
            ("dropout", format!("{:?}", self.dropout)),
            ("tie_embeddings", self.tie_embeddings.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }

    pub(crate) fn from_container(c: &Container) -> Result<Self> {
        let span = match c.require("attention_span")? {
            "none" => None,
            _ => Some(c.parse("attention_span")?),
        };
        Ok(Self {
            arch: c.require("arch")?.parse().map_err(|_| Error::Format("bad arch".into()))?,
            vocab_size: c.parse("vocab_size")?,
            embed_dim: c.parse("embed_dim")?,
            hidden_dim: c.parse("hidden_dim")?,
            num_layers: c.parse("num_layers")?,
            num_heads: c.parse("num_heads")?,
            ff_dim: c.parse("ff_dim")?,
            attention_span: span,
            dropout: c.parse("dropout")?,
            tie_embeddings: c.parse("tie_embeddings")?,
        })
    }
}

impl LanguageModel {
    pub fn to_container(&self) -> Container {
        let records = self
            .params
            .names()
            .iter()
            .zip(self.params.tensors())
            .map(|(n, t)| Record {
                name: n.clone(),
                dims: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Container {
            config: self.config.to_fields(),
            records,
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        if c.get("arch") == Some("kn4") {
            return Err(Error::ArchMismatch {
                expected: "neural model".into(),
                got: "kn4".into(),
            });
        }
        let config = ModelConfig::from_container(&c)?;
        config.validate().map_err(|e| Error::Format(e.to_string()))?;
        let named = c
            .records
            .into_iter()
            .map(|r| Tensor::new(r.dims, r.data).map(|t| (r.name, t)))
            .collect::<Result<Vec<_>>>()?;
        let params = ParamStore::from_named(named)?;
        params.check_against(&ParamStore::zeros(&config)?)?;
        Ok(Self { config, params })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}
