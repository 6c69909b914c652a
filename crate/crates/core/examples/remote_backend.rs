// Configuring an OpenAI-compatible remote backend. Without the credential variable
// the backend refuses to run, before any request is made.

use atyp_harness::backends::{Backend, BackendKind, BackendSpec, ChatBackend, ChatRequest};
use atyp_harness::Error;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = BackendSpec {
        kind: BackendKind::RemoteChat,
        endpoint: Some("http://127.0.0.1:9/v1".into()),
        model_name: "gpt-4o".into(),
        api_key_env: Some("ATYP_EXAMPLE_KEY_NOT_SET".into()),
        supports_images: true,
        ..BackendSpec::scripted("remote", true)
    };
    println!("{}", serde_json::to_string_pretty(&spec)?);
    let backend = Backend::from_spec(spec)?;
    match backend.check_credentials() {
        Err(Error::AuthMissing { env_var, .. }) => println!("missing credential: set {env_var}"),
        other => println!("credential check: {other:?}"),
    }
    let err = backend.complete(&ChatRequest::user("hello")).unwrap_err();
    println!("request without credentials: {err}");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("remote backend example failed");
}
