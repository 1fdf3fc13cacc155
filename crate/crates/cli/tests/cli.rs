use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use skillmine_cli::{extract, CliError, ExtractArgs};
use skillmine_core::extractor::prompt::split_user_message;
use skillmine_core::extractor::RunManifest;
use skillmine_core::providers::{
    CompletionRequest, CompletionResponse, ConfigOverrides, MockProvider, Provider, ProviderConfig, ProviderError,
};
use skillmine_core::store::{SelfAnnotation, Store};

fn export_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic_export")
}

fn skillmine(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skillmine"));
    cmd.args(args)
        .env_remove("OPENAI_API_KEY")
        .env_remove("ANTHROPIC_API_KEY")
        .env_remove("GEMINI_API_KEY")
        .env_remove("SOURCE_DATE_EPOCH")
        .env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    skillmine(args).output().expect("binary runs")
}

#[test]
fn missing_key_exits_1_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let root = export_root();
    let o = run(&["extract", "--model", "gpt-4o", "--root", root.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("OPENAI_API_KEY"));
    assert!(!out.exists());
}

#[test]
fn missing_root_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o =
        run(&["extract", "--root", tmp.path().join("nope").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn chunk_cap_is_recorded_as_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let root = export_root();
    let out = tmp.path().join("out");
    let o = run(&[
        "extract",
        "--root",
        root.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--context-window",
        "800",
        "--max-chunks",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: RunManifest =
        serde_json::from_slice(&std::fs::read(out.join("mock/manifest.json")).unwrap()).unwrap();
    assert!(!manifest.warnings.is_empty());
    assert!(manifest.failed.is_empty());
}

#[test]
fn eval_without_annotations_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let root = export_root();
    let (out, store) = (tmp.path().join("out"), tmp.path().join("store"));
    let (out, store) = (out.to_str().unwrap(), store.to_str().unwrap());
    assert!(run(&["extract", "--root", root.to_str().unwrap(), "--out", out]).status.success());
    assert!(run(&["profile", "--out", out]).status.success());
    let o = run(&["eval", "--out", out, "--store", store]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no evaluable pairs"));
}

#[test]
fn binary_pipeline_reproduces_golden_report() {
    let tmp = tempfile::tempdir().unwrap();
    let root = export_root();
    let (out, store) = (tmp.path().join("out"), tmp.path().join("store"));
    let s = Store::open(&store);
    let raw = std::fs::read_to_string(root.join("../synthetic_annotations.json")).unwrap();
    for row in serde_json::from_str::<Vec<serde_json::Value>>(&raw).unwrap() {
        let a = SelfAnnotation::new(
            row["user"].as_str().unwrap(),
            row["term"].as_str().unwrap(),
            row["self_score"].as_i64().unwrap(),
            chrono::DateTime::UNIX_EPOCH,
        )
        .unwrap();
        s.put_annotation(&a).unwrap();
    }
    let (out, store) = (out.to_str().unwrap(), store.to_str().unwrap());
    assert!(run(&["extract", "--root", root.to_str().unwrap(), "--out", out]).status.success());
    assert!(run(&["profile", "--out", out, "--store", store]).status.success());
    let o = run(&["eval", "--out", out, "--store", store, "--root", root.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let golden = std::fs::read_to_string(root.join("../golden/report.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), golden);
    // profiles were published for the service
    assert_eq!(s.profile_users().unwrap(), ["UID1", "UID2", "UID3"]);
}

#[test]
fn account_reads_password_from_stdin() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().to_str().unwrap();
    let provision = |input: &str| {
        let mut child = skillmine(&["account", "--store", store, "--user", "UID9", "--email", "u9@example.org"])
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
        child.wait().unwrap().code()
    };
    assert_eq!(provision("\n"), Some(1));
    assert_eq!(provision("correct horse\n"), Some(0));
    let s = Store::open(tmp.path());
    assert!(s.verify_login("u9@example.org", "correct horse").unwrap().is_some());
    assert!(s.verify_login("u9@example.org", "correct horse\n").unwrap().is_none());
}

/// Mock that fails every request for one target user.
struct FlakyFor {
    inner: MockProvider,
    user: &'static str,
    failures: AtomicUsize,
}

#[async_trait]
impl Provider for FlakyFor {
    fn config(&self) -> &ProviderConfig {
        self.inner.config()
    }

    async fn check_connection(&self) -> Result<(), ProviderError> {
        Ok(())
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        if split_user_message(&request.user).is_some_and(|(target, _)| target == self.user) {
            self.failures.fetch_add(1, Ordering::SeqCst);
            return Err(ProviderError::Http { provider: "flaky".into(), status: 503, body: "busy".into() });
        }
        self.inner.complete(request).await
    }
}

fn mock_config() -> ProviderConfig {
    ProviderConfig::for_model("mock", ConfigOverrides::default()).unwrap()
}

#[tokio::test]
async fn provider_failures_exit_2_and_resume_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ExtractArgs {
        root: export_root(),
        out: tmp.path().to_path_buf(),
        users: Vec::new(),
        filter_billing: false,
        filter_active: false,
        model: "mock".into(),
        context_window: None,
        safety_factor: None,
        temperature: None,
        max_chunks: None,
        parallelism: 2,
    };
    let flaky =
        Arc::new(FlakyFor { inner: MockProvider::new(mock_config()), user: "UID2", failures: AtomicUsize::new(0) });
    let err = extract(&args, Some(flaky.clone())).await.unwrap_err();
    assert!(matches!(err, CliError::Partial(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(flaky.failures.load(Ordering::SeqCst) > 0);
    assert!(tmp.path().join("mock/UID1/general.json").exists());

    // only the failed user's channels are requested again
    let healthy = Arc::new(MockProvider::new(mock_config()));
    let manifest = extract(&args, Some(healthy.clone())).await.unwrap();
    assert!(healthy.calls() > 0);
    assert!(manifest.written.iter().all(|p| p.contains("UID2")), "{:?}", manifest.written);
    assert!(manifest.failed.is_empty());
}
