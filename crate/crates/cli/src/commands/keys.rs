use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ict_core::KeyPair;
use serde_json::json;

use super::{parse_algorithm, parse_kind, print_json};
use crate::error::{CliError, CliResult, Format};
use crate::KeygenArgs;

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_private(path: &Path, pem: &str) -> std::io::Result<()> {
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    options.open(path)?.write_all(pem.as_bytes())
}

pub fn keygen(args: &KeygenArgs, format: Format) -> CliResult {
    let algorithm = parse_algorithm(&args.alg)?;
    let (kind, server) = parse_kind(&args.kind, args.rev_srv.as_deref())?;
    let key = KeyPair::generate(algorithm, kind, server).map_err(|e| CliError::failure("keygen-failed", e))?;

    let private_path = with_suffix(&args.out, ".pem");
    let public_path = with_suffix(&args.out, ".jwk.json");
    write_private(&private_path, &key.to_pkcs8_pem()).map_err(|e| CliError::io(private_path.display(), e))?;
    let jwk = serde_json::to_string_pretty(key.public_jwk()).expect("JWK serializes");
    fs::write(&public_path, jwk + "\n").map_err(|e| CliError::io(public_path.display(), e))?;

    match format {
        Format::Json => print_json(&json!({
            "private_key": private_path,
            "public_jwk": public_path,
            "alg": algorithm.as_str(),
            "kind": kind.as_str(),
            "rev_srv": key.revocation_server(),
            "thumbprint": key.thumbprint(),
        })),
        Format::Text => {
            println!("private key  {}", private_path.display());
            println!("public JWK   {}", public_path.display());
            println!("{} {} key, thumbprint {}", algorithm, kind.as_str(), key.thumbprint());
        }
    }
    Ok(())
}
