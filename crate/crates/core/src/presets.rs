use crate::error::{Error, Result};
use crate::shape::WorkloadShape;

/// One benchmark network row: attention dimensions for a single layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelPreset {
    pub name: &'static str,
    pub heads: usize,
    pub seq_len: usize,
    pub hidden: usize,
    pub head_dim: usize,
}

impl ModelPreset {
    /// Workload for this preset at the given batch size, FP16 accounting.
    pub fn shape(&self, batch: usize) -> WorkloadShape {
        WorkloadShape::new(batch, self.heads, self.seq_len, self.head_dim)
            .expect("preset dimensions are nonzero")
    }
}

/// The twelve benchmark networks. Names are lowercase slugs; batch defaults
/// to 1 (single-inference edge scenario).
pub const PRESETS: [ModelPreset; 12] = [
    ModelPreset { name: "bert-base", heads: 12, seq_len: 512, hidden: 768, head_dim: 64 },
    ModelPreset { name: "bert-large", heads: 16, seq_len: 512, hidden: 1024, head_dim: 64 },
    ModelPreset { name: "bert-small", heads: 8, seq_len: 512, hidden: 512, head_dim: 64 },
    ModelPreset { name: "llama3-8b", heads: 32, seq_len: 512, hidden: 4096, head_dim: 128 },
    ModelPreset { name: "t5-mini", heads: 8, seq_len: 512, hidden: 256, head_dim: 32 },
    ModelPreset { name: "vit-b14", heads: 12, seq_len: 196, hidden: 768, head_dim: 64 },
    ModelPreset { name: "vit-l14", heads: 16, seq_len: 196, hidden: 1024, head_dim: 64 },
    ModelPreset { name: "vit-h14", heads: 16, seq_len: 196, hidden: 1280, head_dim: 80 },
    ModelPreset { name: "vit-b16", heads: 12, seq_len: 256, hidden: 768, head_dim: 64 },
    ModelPreset { name: "vit-l16", heads: 16, seq_len: 256, hidden: 1024, head_dim: 64 },
    ModelPreset { name: "vit-h16", heads: 16, seq_len: 256, hidden: 1280, head_dim: 80 },
    ModelPreset { name: "xlm", heads: 8, seq_len: 512, hidden: 1024, head_dim: 128 },
];

/// Alternate names for presets that share a table row.
const ALIASES: [(&str, &str); 5] = [
    ("t5-base", "bert-base"),
    ("t5-large", "bert-large"),
    ("t5-3b", "llama3-8b"),
    ("t5-xl", "llama3-8b"),
    ("t5-small", "t5-mini"),
];

/// Looks up a preset by slug or alias, case-insensitive.
pub fn find_preset(name: &str) -> Result<&'static ModelPreset> {
    let slug = name.to_ascii_lowercase();
    let target = ALIASES
        .iter()
        .find(|(alias, _)| *alias == slug)
        .map(|(_, canon)| *canon)
        .unwrap_or(slug.as_str());
    PRESETS.iter().find(|p| p.name == target).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::Config(format!("unknown preset '{name}'; known presets: {}", known.join(", ")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_times_head_dim_matches_hidden() {
        for p in &PRESETS {
            assert_eq!(p.heads * p.head_dim, p.hidden, "{}", p.name);
        }
    }

    #[test]
    fn lookup_by_name_and_alias() {
        assert_eq!(find_preset("bert-base").unwrap().hidden, 768);
        assert_eq!(find_preset("T5-Base").unwrap().name, "bert-base");
        assert_eq!(find_preset("t5-xl").unwrap().name, "llama3-8b");
        let err = find_preset("gpt-5").unwrap_err().to_string();
        assert!(err.contains("bert-base") && err.contains("xlm"), "{err}");
    }

    #[test]
    fn shape_uses_batch_one_defaults() {
        let s = find_preset("bert-base").unwrap().shape(1);
        assert_eq!((s.batch, s.heads, s.seq_len, s.embed), (1, 12, 512, 64));
        assert_eq!(s.element_bytes, 2);
    }
}
