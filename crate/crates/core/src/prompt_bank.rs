//! Prompt banks: per-class normal/abnormal templates plus keyword prompts,
//! and their embedding into a tagged prompt matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::TextEncoder;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const BANK_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankFile {
    version: u32,
    classes: Vec<ClassEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassEntry {
    name: String,
    normal_templates: Vec<String>,
    abnormal_templates: Vec<String>,
    #[serde(default)]
    keywords: Vec<KeywordEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeywordEntry {
    keyword: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassPrompts {
    pub class_name: String,
    pub normal_templates: Vec<String>,
    pub abnormal_templates: Vec<String>,
    /// Abnormal attribute keywords in file order.
    pub keywords: Vec<String>,
    pub keyword_prompts: BTreeMap<String, String>,
}

impl ClassPrompts {
    /// Checks the class invariants, naming the offending field on failure.
    pub fn validate(&self) -> Result<()> {
        let schema = |field, detail: String| Error::Schema {
            class: self.class_name.clone(),
            field,
            detail,
        };
        if self.class_name.trim().is_empty() {
            return Err(schema("name", "class name is empty".into()));
        }
        if self.normal_templates.is_empty() {
            return Err(schema("normal_templates", "at least one normal template is required".into()));
        }
        if self.abnormal_templates.is_empty() {
            return Err(schema("abnormal_templates", "at least one abnormal template is required".into()));
        }
        let mut seen_kw = BTreeSet::new();
        for kw in &self.keywords {
            if !seen_kw.insert(kw.as_str()) {
                return Err(schema("keywords", format!("keyword `{kw}` listed twice")));
            }
            match self.keyword_prompts.get(kw) {
                Some(p) if !p.trim().is_empty() => {}
                _ => return Err(schema("keywords", format!("keyword `{kw}` has no prompt"))),
            }
        }
        if let Some(extra) = self.keyword_prompts.keys().find(|k| !seen_kw.contains(k.as_str())) {
            return Err(schema("keywords", format!("prompt for unlisted keyword `{extra}`")));
        }
        let mut seen = BTreeSet::new();
        for (field, text) in self.raw_prompts() {
            if text.trim().is_empty() {
                return Err(schema(field, "empty prompt string".into()));
            }
            if !seen.insert(text) {
                return Err(schema(field, format!("duplicate prompt `{text}`")));
            }
        }
        Ok(())
    }

    fn raw_prompts(&self) -> impl Iterator<Item = (&'static str, &str)> {
        let normal = self.normal_templates.iter().map(|s| ("normal_templates", s.as_str()));
        let abnormal = self.abnormal_templates.iter().map(|s| ("abnormal_templates", s.as_str()));
        let kw = self
            .keywords
            .iter()
            .map(|k| ("keywords", self.keyword_prompts[k].as_str()));
        normal.chain(abnormal).chain(kw)
    }
}

/// Validated prompt bank keyed by class name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PromptBank {
    classes: BTreeMap<String, ClassPrompts>,
}

impl PromptBank {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let file: BankFile = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
        if file.version != BANK_VERSION {
            return Err(Error::Input(format!(
                "{}: unsupported prompt bank version {}",
                origin.display(),
                file.version
            )));
        }
        let mut classes = BTreeMap::new();
        for entry in file.classes {
            let mut keywords = Vec::with_capacity(entry.keywords.len());
            let mut keyword_prompts = BTreeMap::new();
            for kw in entry.keywords {
                if let Some(p) = kw.prompt {
                    keyword_prompts.insert(kw.keyword.clone(), p);
                }
                keywords.push(kw.keyword);
            }
            let cp = ClassPrompts {
                class_name: entry.name,
                normal_templates: entry.normal_templates,
                abnormal_templates: entry.abnormal_templates,
                keywords,
                keyword_prompts,
            };
            cp.validate()?;
            if classes.contains_key(&cp.class_name) {
                return Err(Error::Schema {
                    class: cp.class_name,
                    field: "name",
                    detail: "duplicate class name".into(),
                });
            }
            classes.insert(cp.class_name.clone(), cp);
        }
        Ok(PromptBank { classes })
    }

    pub fn get(&self, class: &str) -> Option<&ClassPrompts> {
        self.classes.get(class)
    }

    pub fn class(&self, class: &str) -> Result<&ClassPrompts> {
        self.get(class)
            .ok_or_else(|| Error::Input(format!("class `{class}` not in prompt bank")))
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassPrompts> {
        self.classes.values()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Canonical JSON: classes sorted by name, fields in schema order.
    pub fn to_json_string(&self) -> String {
        let file = BankFile {
            version: BANK_VERSION,
            classes: self
                .classes
                .values()
                .map(|cp| ClassEntry {
                    name: cp.class_name.clone(),
                    normal_templates: cp.normal_templates.clone(),
                    abnormal_templates: cp.abnormal_templates.clone(),
                    keywords: cp
                        .keywords
                        .iter()
                        .map(|k| KeywordEntry {
                            keyword: k.clone(),
                            prompt: Some(cp.keyword_prompts[k].clone()),
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("bank serializes");
        s.push('\n');
        s
    }
}

/// Source of the prompt bank shipped with the repository.
pub const BUNDLED_BANK_JSON: &str = include_str!("../../../data/prompt_bank.json");

pub fn bundled_prompt_bank() -> PromptBank {
    PromptBank::from_json_str(BUNDLED_BANK_JSON, Path::new("data/prompt_bank.json")).expect("bundled bank is valid")
}

pub fn load_prompt_bank(path: impl AsRef<Path>) -> Result<PromptBank> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PromptBank::from_json_str(&text, path)
}

fn substitute(template: &str, class: &str) -> Result<String> {
    let mut out = String::with_capacity(template.len() + class.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let close = tail
            .find('}')
            .ok_or_else(|| Error::Template(format!("unterminated placeholder in `{template}`")))?;
        match &tail[1..close] {
            "class" => out.push_str(class),
            other => {
                return Err(Error::Template(format!(
                    "unknown placeholder `{{{other}}}` in `{template}`"
                )))
            }
        }
        rest = &tail[close + 1..];
    }
    if rest.contains('}') {
        return Err(Error::Template(format!("stray `}}` in `{template}`")));
    }
    out.push_str(rest);
    Ok(out)
}

/// Expands a class into its ordered prompt list: normal templates, abnormal
/// templates, then keyword prompts, each block in file order, with `{class}`
/// substituted.
pub fn expand_templates(cp: &ClassPrompts) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(cp.normal_templates.len() + cp.abnormal_templates.len() + cp.keywords.len());
    let mut seen = BTreeSet::new();
    for (_, raw) in cp.raw_prompts() {
        let text = substitute(raw, &cp.class_name)?;
        if !seen.insert(text.clone()) {
            return Err(Error::Template(format!(
                "duplicate prompt `{text}` after expansion in class `{}`",
                cp.class_name
            )));
        }
        out.push(text);
    }
    Ok(out)
}

/// Embedded prompt ensemble with its abnormal-column tags.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptMatrix {
    pub prompts: Vec<String>,
    /// `L×C2`, unit-norm rows.
    pub embeddings: Tensor,
    pub abnormal_mask: Vec<bool>,
    pub n_normal: usize,
    pub n_abnormal_templates: usize,
}

impl PromptMatrix {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn width(&self) -> usize {
        self.embeddings.shape()[1]
    }

    /// Errors unless at least one column is normal and one abnormal.
    pub fn check_scorable(&self) -> Result<()> {
        let abnormal = self.abnormal_mask.iter().filter(|&&m| m).count();
        if abnormal == 0 || abnormal == self.abnormal_mask.len() {
            return Err(Error::Input(format!(
                "degenerate prompt matrix: {abnormal} of {} columns abnormal",
                self.abnormal_mask.len()
            )));
        }
        Ok(())
    }

    /// `2×C2` matrix of per-category mean template embeddings: row 0 averages
    /// the normal templates, row 1 the abnormal templates. Keyword prompts do
    /// not take part.
    pub fn win_category_means(&self) -> Tensor {
        let c2 = self.width();
        let mut out = vec![0.0; 2 * c2];
        let blocks = [
            (0, self.n_normal),
            (self.n_normal, self.n_normal + self.n_abnormal_templates),
        ];
        for (cat, (lo, hi)) in blocks.into_iter().enumerate() {
            for r in lo..hi {
                for (o, v) in out[cat * c2..(cat + 1) * c2].iter_mut().zip(self.embeddings.row(r)) {
                    *o += v;
                }
            }
            let n = (hi - lo) as f64;
            out[cat * c2..(cat + 1) * c2].iter_mut().for_each(|v| *v /= n);
        }
        Tensor::from_parts(vec![2, c2], out)
    }

    /// Reorders rows by `perm` (`new[i] = old[perm[i]]`); used to check that
    /// scoring is insensitive to prompt order within a block.
    pub fn permuted(&self, perm: &[usize]) -> PromptMatrix {
        let c2 = self.width();
        let mut data = Vec::with_capacity(perm.len() * c2);
        for &p in perm {
            data.extend_from_slice(self.embeddings.row(p));
        }
        PromptMatrix {
            prompts: perm.iter().map(|&p| self.prompts[p].clone()).collect(),
            embeddings: Tensor::from_parts(vec![perm.len(), c2], data),
            abnormal_mask: perm.iter().map(|&p| self.abnormal_mask[p]).collect(),
            n_normal: self.n_normal,
            n_abnormal_templates: self.n_abnormal_templates,
        }
    }
}

pub fn build_prompt_matrix(cp: &ClassPrompts, encoder: &dyn TextEncoder) -> Result<PromptMatrix> {
    let prompts = expand_templates(cp)?;
    let c2 = encoder.text_width();
    let mut data = Vec::with_capacity(prompts.len() * c2);
    for p in &prompts {
        data.extend_from_slice(encoder.encode_text(p)?.data());
    }
    let n_normal = cp.normal_templates.len();
    let abnormal_mask = (0..prompts.len()).map(|i| i >= n_normal).collect();
    Ok(PromptMatrix {
        embeddings: Tensor::from_parts(vec![prompts.len(), c2], data),
        prompts,
        abnormal_mask,
        n_normal,
        n_abnormal_templates: cp.abnormal_templates.len(),
    })
}
