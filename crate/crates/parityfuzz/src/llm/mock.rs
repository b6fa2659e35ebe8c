//! Fixture-directory adapter for fully offline runs. Responses live at
//! `<root>/<template_id>/<request-hash>.txt`; a missing fixture is a hard
//! error so silent empty completions can never mask a broken pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use super::{approximate_usage, parse_response, ChatModel, LlmError, ModelResponse, PromptRequest};

#[derive(Debug, Clone)]
pub struct MockAdapter {
    root: PathBuf,
}

impl MockAdapter {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn fixture_path(&self, req: &PromptRequest) -> PathBuf {
        Self::path_for(&self.root, req)
    }

    pub fn path_for(root: &Path, req: &PromptRequest) -> PathBuf {
        root.join(req.template_id.as_str())
            .join(format!("{}.txt", req.fixture_hash()))
    }

    /// Authoring helper: store `text` as the response for `req`. Used by
    /// tests and by fixture-recording tooling.
    pub fn write_fixture(
        root: &Path,
        req: &PromptRequest,
        text: &str,
    ) -> std::io::Result<PathBuf> {
        let path = Self::path_for(root, req);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, text)?;
        Ok(path)
    }
}

impl ChatModel for MockAdapter {
    fn complete(&self, req: &PromptRequest) -> Result<ModelResponse, LlmError> {
        let path = self.fixture_path(req);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => {
                return Err(LlmError::MissingFixture {
                    template: req.template_id.to_string(),
                    hash: req.fixture_hash(),
                    path,
                });
            }
            Err(err) => return Err(err.into()),
        };
        let (parsed, _skipped) = parse_response(req.template_id, &text);
        let usage = approximate_usage(&req.prompt_text(), &text);
        Ok(ModelResponse { text, parsed, usage })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::llm::{ParsedPayload, TemplateId};

    fn req(template: TemplateId, pairs: &[(&str, &str)]) -> PromptRequest {
        let slots: BTreeMap<String, String> =
            pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        PromptRequest::new(template, slots, 0.2, 11).unwrap()
    }

    #[test]
    fn serves_written_fixture_for_identical_request() {
        let dir = tempfile::tempdir().unwrap();
        let request = req(TemplateId::SoRuleGen, &[("feature", "struct")]);
        MockAdapter::write_fixture(dir.path(), &request, "insert: add a nested struct field\n")
            .unwrap();

        let adapter = MockAdapter::new(dir.path());
        let response = adapter.complete(&request).unwrap();
        assert!(response.text.contains("nested struct field"));
        assert!(matches!(response.parsed, Some(ParsedPayload::Rules(ref r)) if r.len() == 1));
        assert!(response.usage.completion_tokens > 0);
    }

    #[test]
    fn missing_fixture_is_a_hard_error_with_the_expected_path() {
        let dir = tempfile::tempdir().unwrap();
        let adapter = MockAdapter::new(dir.path());
        let request = req(TemplateId::SoRuleGen, &[("feature", "mapping")]);
        let err = adapter.complete(&request).unwrap_err();
        match err {
            LlmError::MissingFixture { template, hash, path } => {
                assert_eq!(template, "so_rule_gen");
                assert_eq!(hash, request.fixture_hash());
                assert_eq!(path, adapter.fixture_path(&request));
            }
            other => panic!("expected MissingFixture, got {other:?}"),
        }
    }

    #[test]
    fn different_slots_map_to_different_fixture_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = req(TemplateId::SoRuleGen, &[("feature", "struct")]);
        let b = req(TemplateId::SoRuleGen, &[("feature", "mapping")]);
        assert_ne!(
            MockAdapter::path_for(dir.path(), &a),
            MockAdapter::path_for(dir.path(), &b)
        );
        // Both still live under the template directory.
        assert!(MockAdapter::path_for(dir.path(), &a)
            .starts_with(dir.path().join("so_rule_gen")));
    }
}
