//! Prompt construction for every reasoning stage and baseline method, and
//! structured parsing of model replies into candidate lists and patches.
//!
//! Templates are plain text files with `{placeholder}` slots; defaults are
//! embedded but a templates directory can override them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{CompletionRequest, LlmClient};
use crate::retrieval::ComposedInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Cause,
    Plan,
    Patch,
    Monolithic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    T3,
    Cot,
    Tot,
    PlanAndSolve,
    Analogical,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "t3" => Ok(Method::T3),
            "cot" => Ok(Method::Cot),
            "tot" => Ok(Method::Tot),
            "plan_and_solve" | "plan-and-solve" => Ok(Method::PlanAndSolve),
            "analogical" => Ok(Method::Analogical),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::T3 => "t3",
            Method::Cot => "cot",
            Method::Tot => "tot",
            Method::PlanAndSolve => "plan_and_solve",
            Method::Analogical => "analogical",
        };
        write!(f, "{s}")
    }
}

const PLACEHOLDERS: &[&str] = &["examples", "target", "location", "causes", "plans"];

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: String,
    pub stage: Stage,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(id: &str, stage: Stage, body: &str) -> Self {
        PromptTemplate {
            id: id.to_string(),
            stage,
            body: body.to_string(),
        }
    }
}

/// The full template set for one run: the three stage templates plus one
/// monolithic template per baseline method.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub cause: PromptTemplate,
    pub plan: PromptTemplate,
    pub patch: PromptTemplate,
    pub cot: PromptTemplate,
    pub tot: PromptTemplate,
    pub plan_and_solve: PromptTemplate,
    pub analogical: PromptTemplate,
}

impl TemplateSet {
    /// Built-in defaults, compiled into the binary.
    pub fn builtin() -> Self {
        TemplateSet {
            cause: PromptTemplate::new(
                "cause",
                Stage::Cause,
                include_str!("../templates/cause.txt"),
            ),
            plan: PromptTemplate::new("plan", Stage::Plan, include_str!("../templates/plan.txt")),
            patch: PromptTemplate::new(
                "patch",
                Stage::Patch,
                include_str!("../templates/patch.txt"),
            ),
            cot: PromptTemplate::new(
                "cot",
                Stage::Monolithic,
                include_str!("../templates/cot.txt"),
            ),
            tot: PromptTemplate::new(
                "tot",
                Stage::Monolithic,
                include_str!("../templates/tot.txt"),
            ),
            plan_and_solve: PromptTemplate::new(
                "plan_and_solve",
                Stage::Monolithic,
                include_str!("../templates/plan_and_solve.txt"),
            ),
            analogical: PromptTemplate::new(
                "analogical",
                Stage::Monolithic,
                include_str!("../templates/analogical.txt"),
            ),
        }
    }

    /// Load from a directory, falling back to the builtin text for any
    /// missing file.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut set = Self::builtin();
        for (name, slot) in [
            ("cause", &mut set.cause),
            ("plan", &mut set.plan),
            ("patch", &mut set.patch),
            ("cot", &mut set.cot),
            ("tot", &mut set.tot),
            ("plan_and_solve", &mut set.plan_and_solve),
            ("analogical", &mut set.analogical),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                slot.body = fs::read_to_string(&path).map_err(|source| Error::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        Ok(set)
    }

    pub fn for_method(&self, method: Method) -> &PromptTemplate {
        match method {
            Method::Cot => &self.cot,
            Method::Tot => &self.tot,
            Method::PlanAndSolve => &self.plan_and_solve,
            Method::Analogical => &self.analogical,
            Method::T3 => &self.patch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    CauseList,
    PlanList,
    Patch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReply {
    pub kind: ReplyKind,
    pub items: Vec<String>,
    pub raw: String,
}

/// Substitute `{placeholder}` slots in one pass. Only the known
/// placeholder names are substituted; other braces pass through, so code
/// in values is never re-expanded. A referenced placeholder with no value
/// is a template error.
pub fn render(template: &PromptTemplate, values: &BTreeMap<&str, String>) -> Result<String> {
    let body = &template.body;
    let mut out = String::with_capacity(body.len());
    let mut rest = body.as_str();
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if PLACEHOLDERS.contains(&&after[..close]) => {
                let name = &after[..close];
                match values.get(name) {
                    Some(v) => out.push_str(v),
                    None => return Err(Error::Template(name.to_string())),
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Render the few-shot example section in retrieval order.
pub fn render_examples(input: &ComposedInput) -> String {
    let mut out = String::new();
    for (i, ex) in input.examples.iter().enumerate() {
        out.push_str(&format!(
            "### Example {}\nBuggy:\n{}\nFixed:\n{}\n\n",
            i + 1,
            ex.buggy_code,
            ex.fixed_code
        ));
    }
    out
}

pub fn render_numbered(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}. {}", i + 1, item))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Standard values for a stage prompt: examples, target, location, plus
/// cause/plan lists from the stage context (empty lists render as empty).
pub fn stage_values<'a>(
    input: &ComposedInput,
    causes: &[String],
    plans: &[String],
) -> BTreeMap<&'a str, String> {
    let mut values = BTreeMap::new();
    values.insert("examples", render_examples(input));
    values.insert("target", input.target.clone());
    values.insert(
        "location",
        input
            .fault_location
            .clone()
            .unwrap_or_else(|| "not specified".into()),
    );
    values.insert("causes", render_numbered(causes));
    values.insert("plans", render_numbered(plans));
    values
}

fn enumerated_item(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    // numbered: "1. text" or "2) text"
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &trimmed[digits..];
        if let Some(stripped) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            let item = stripped.trim();
            if !item.is_empty() {
                return Some(item);
            }
        }
    }
    // bulleted: "- text" or "* text"
    if let Some(stripped) = trimmed
        .strip_prefix("- ")
        .or_else(|| trimmed.strip_prefix("* "))
    {
        let item = stripped.trim();
        if !item.is_empty() {
            return Some(item);
        }
    }
    None
}

/// Contents of the first fenced code block, if any. The opening fence may
/// carry a language tag.
fn first_fenced_block(raw: &str) -> Option<String> {
    let open = raw.find("```")?;
    let after_fence = &raw[open + 3..];
    let body_start = after_fence
        .find('\n')
        .map(|i| i + 1)
        .unwrap_or(after_fence.len());
    let body = &after_fence[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(body[..end].trim_end().to_string())
}

/// Extract candidates or a patch from a free-text reply. List kinds
/// accept numbered or bulleted lines, falling back to the lines of the
/// first fenced block; surrounding prose is ignored. An empty extraction
/// for a list kind is a parse error. Patch kind takes the first fenced
/// block, else the whole reply.
pub fn parse_reply(raw: &str, expected: ReplyKind) -> Result<ParsedReply> {
    match expected {
        ReplyKind::Patch => {
            let patch = first_fenced_block(raw).unwrap_or_else(|| raw.trim().to_string());
            Ok(ParsedReply {
                kind: expected,
                items: vec![patch],
                raw: raw.to_string(),
            })
        }
        ReplyKind::CauseList | ReplyKind::PlanList => {
            let mut items: Vec<String> = raw
                .lines()
                .filter_map(enumerated_item)
                .map(str::to_string)
                .collect();
            if items.is_empty() {
                if let Some(block) = first_fenced_block(raw) {
                    items = block
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(str::to_string)
                        .collect();
                }
            }
            if items.is_empty() {
                return Err(Error::Reply(format!(
                    "no list items found in reply starting {:?}",
                    raw.chars().take(60).collect::<String>()
                )));
            }
            Ok(ParsedReply {
                kind: expected,
                items,
                raw: raw.to_string(),
            })
        }
    }
}

/// Run one baseline method: a single completion request with
/// `sample_count` samples over the method's monolithic template, one
/// parsed patch per sample.
#[allow(clippy::too_many_arguments)]
pub fn baseline_pipeline(
    method: Method,
    input: &ComposedInput,
    templates: &TemplateSet,
    client: &LlmClient,
    sample_count: usize,
    temperature: f64,
    max_output: usize,
    model_id: &str,
    seed: Option<u64>,
) -> Result<(String, Vec<String>)> {
    if method == Method::T3 {
        return Err(Error::Config("t3 is not a monolithic baseline".into()));
    }
    let template = templates.for_method(method);
    let prompt = render(template, &stage_values(input, &[], &[]))?;
    let request = CompletionRequest {
        prompt: prompt.clone(),
        temperature,
        sample_count,
        max_output,
        model_id: model_id.to_string(),
        seed,
    };
    let batch = client.complete(&request)?;
    let patches = batch
        .samples
        .iter()
        .map(|s| {
            parse_reply(s, ReplyKind::Patch).map(|p| p.items.into_iter().next().unwrap_or_default())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((prompt, patches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmClient, ScriptRule, ScriptedBackend};

    fn input(target: &str) -> ComposedInput {
        ComposedInput::bare(target, None)
    }

    #[test]
    fn render_substitutes_target() {
        let t = PromptTemplate::new("t", Stage::Patch, "FIX: {target}");
        let mut values = BTreeMap::new();
        values.insert("target", "x".to_string());
        assert_eq!(render(&t, &values).unwrap(), "FIX: x");
    }

    #[test]
    fn render_missing_placeholder_is_template_error() {
        let t = PromptTemplate::new("t", Stage::Cause, "FIX: {target}");
        let err = render(&t, &BTreeMap::new()).unwrap_err();
        match err {
            Error::Template(name) => assert_eq!(name, "target"),
            other => panic!("expected template error, got {other:?}"),
        }
    }

    #[test]
    fn render_is_deterministic_and_braces_pass_through() {
        let t = PromptTemplate::new("t", Stage::Patch, "code {target} end {notaslot}");
        let mut values = BTreeMap::new();
        values.insert("target", "if (x) { y(); }".to_string());
        let a = render(&t, &values).unwrap();
        let b = render(&t, &values).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, "code if (x) { y(); } end {notaslot}");
    }

    #[test]
    fn substituted_code_is_not_reexpanded() {
        let t = PromptTemplate::new("t", Stage::Patch, "{target}");
        let mut values = BTreeMap::new();
        values.insert("target", "printf(\"{location}\");".to_string());
        assert_eq!(render(&t, &values).unwrap(), "printf(\"{location}\");");
    }

    #[test]
    fn builtin_templates_render_for_their_stage() {
        let set = TemplateSet::builtin();
        let inp = input("int x = 0;");
        for t in [
            &set.cause,
            &set.plan,
            &set.patch,
            &set.cot,
            &set.tot,
            &set.plan_and_solve,
            &set.analogical,
        ] {
            let text = render(t, &stage_values(&inp, &["c".into()], &["p".into()])).unwrap();
            assert!(
                text.contains("int x = 0;"),
                "template {} lost the target",
                t.id
            );
        }
    }

    #[test]
    fn analogical_template_self_example_section_precedes_target() {
        let set = TemplateSet::builtin();
        let recall = set
            .analogical
            .body
            .find("Recall two relevant bugs")
            .unwrap();
        let target = set.analogical.body.find("{target}").unwrap();
        assert!(recall < target);
    }

    #[test]
    fn parse_numbered_cause_list() {
        let r = parse_reply("1. null deref\n2. off-by-one", ReplyKind::CauseList).unwrap();
        assert_eq!(r.items, vec!["null deref", "off-by-one"]);
    }

    #[test]
    fn parse_paren_numbered_and_bulleted() {
        let r = parse_reply(
            "intro\n1) first\n- second\n* third\noutro",
            ReplyKind::PlanList,
        )
        .unwrap();
        assert_eq!(r.items, vec!["first", "second", "third"]);
    }

    #[test]
    fn parse_patch_from_fenced_block() {
        let raw = "Sure, here is the fix:\n```java\nreturn x + 1;\n```\nHope that helps.";
        let r = parse_reply(raw, ReplyKind::Patch).unwrap();
        assert_eq!(r.items, vec!["return x + 1;"]);
    }

    #[test]
    fn parse_patch_without_fence_takes_whole_reply() {
        let r = parse_reply("  return x + 1;  ", ReplyKind::Patch).unwrap();
        assert_eq!(r.items, vec!["return x + 1;"]);
    }

    #[test]
    fn parse_blank_list_reply_is_error() {
        assert!(parse_reply("", ReplyKind::CauseList).is_err());
        assert!(parse_reply("no list here", ReplyKind::CauseList).is_err());
    }

    #[test]
    fn parse_list_from_fenced_block_fallback() {
        let r = parse_reply("```\nalpha\nbeta\n```", ReplyKind::CauseList).unwrap();
        assert_eq!(r.items, vec!["alpha", "beta"]);
    }

    #[test]
    fn list_roundtrip_through_own_format() {
        let items: Vec<String> = vec!["missing null check".into(), "wrong bound".into()];
        let rendered = render_numbered(&items);
        let parsed = parse_reply(&rendered, ReplyKind::CauseList).unwrap();
        assert_eq!(parsed.items, items);
    }

    #[test]
    fn baseline_returns_one_patch_per_sample() {
        let backend = ScriptedBackend::new(vec![ScriptRule {
            pattern: ".*".into(),
            responses: vec!["```\nfixed();\n```".into()],
        }])
        .unwrap();
        let client = LlmClient::new(Box::new(backend), None);
        let set = TemplateSet::builtin();
        let (_, patches) = baseline_pipeline(
            Method::Cot,
            &input("broken();"),
            &set,
            &client,
            3,
            0.7,
            512,
            "mock",
            Some(1),
        )
        .unwrap();
        assert_eq!(patches, vec!["fixed();", "fixed();", "fixed();"]);
        assert_eq!(client.backend_calls(), 1);
    }

    #[test]
    fn unknown_method_rejected() {
        assert!(Method::parse("zen").is_err());
        assert_eq!(
            Method::parse("plan-and-solve").unwrap(),
            Method::PlanAndSolve
        );
    }
}
