//! Runs in its own process so the environment can be cleared safely.

use skillmine_core::providers::{build_provider, ConfigOverrides, ProviderConfig, ProviderError};

#[tokio::test]
async fn missing_keys_fail_before_any_request() {
    for var in ["OPENAI_API_KEY", "ANTHROPIC_API_KEY", "GEMINI_API_KEY"] {
        std::env::remove_var(var);
    }
    // nothing listens here; a request would surface as a transport error
    let overrides = || ConfigOverrides { base_url: Some("http://127.0.0.1:9".into()), ..Default::default() };
    for (model, expected) in
        [("gpt-4o", "OPENAI_API_KEY"), ("claude-haiku-4-5", "ANTHROPIC_API_KEY"), ("gemini-2.5-pro", "GEMINI_API_KEY")]
    {
        let config = ProviderConfig::for_model(model, overrides()).unwrap();
        match config.api_key() {
            Err(ProviderError::MissingCredential { var }) => assert_eq!(var, expected),
            other => panic!("{model}: {other:?}"),
        }
        let err = build_provider(config).unwrap().check_connection().await.unwrap_err();
        assert!(matches!(err, ProviderError::MissingCredential { .. }), "{err}");
    }
    let mock = ProviderConfig::for_model("mock", ConfigOverrides::default()).unwrap();
    assert_eq!(mock.api_key().unwrap(), None);
}
