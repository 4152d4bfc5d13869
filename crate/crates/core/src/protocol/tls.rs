//! Mutually-authenticated TLS for the deployment transports.
//!
//! Both sides present certificates and verify the other against a shared
//! CA bundle: the server rejects unknown trainers, trainers and peers
//! reject impostor endpoints.

use std::io::BufReader;
use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::Arc;

use rustls::pki_types::{CertificateDer, PrivateKeyDer, ServerName};
use rustls::server::WebPkiClientVerifier;
use rustls::{ClientConfig, ClientConnection, RootCertStore, ServerConfig, ServerConnection, StreamOwned};

use super::net::NetStream;
use super::ProtocolError;

/// PEM locations plus the name to verify on outbound connections.
#[derive(Clone, Debug)]
pub struct TlsPaths {
    pub cert: PathBuf,
    pub key: PathBuf,
    pub ca: PathBuf,
    pub server_name: String,
}

#[derive(Clone, Copy, Debug)]
pub enum TlsRole {
    Server,
    Client,
}

fn tls_err(e: impl std::fmt::Display) -> ProtocolError {
    ProtocolError::Tls(e.to_string())
}

fn load_certs(path: &PathBuf) -> Result<Vec<CertificateDer<'static>>, ProtocolError> {
    let file = std::fs::File::open(path)
        .map_err(|e| tls_err(format!("open {}: {e}", path.display())))?;
    rustls_pemfile::certs(&mut BufReader::new(file))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| tls_err(format!("parse {}: {e}", path.display())))
}

fn load_key(path: &PathBuf) -> Result<PrivateKeyDer<'static>, ProtocolError> {
    let file = std::fs::File::open(path)
        .map_err(|e| tls_err(format!("open {}: {e}", path.display())))?;
    rustls_pemfile::private_key(&mut BufReader::new(file))
        .map_err(|e| tls_err(format!("parse {}: {e}", path.display())))?
        .ok_or_else(|| tls_err(format!("{} holds no private key", path.display())))
}

fn root_store(path: &PathBuf) -> Result<RootCertStore, ProtocolError> {
    let mut roots = RootCertStore::empty();
    for cert in load_certs(path)? {
        roots.add(cert).map_err(tls_err)?;
    }
    Ok(roots)
}

fn ensure_provider() {
    let _ = rustls::crypto::ring::default_provider().install_default();
}

/// Wraps a TCP stream in a TLS session for the given role.
pub fn wrap(
    stream: TcpStream,
    paths: &TlsPaths,
    role: TlsRole,
) -> Result<Box<dyn NetStream>, ProtocolError> {
    ensure_provider();
    let certs = load_certs(&paths.cert)?;
    let key = load_key(&paths.key)?;
    let roots = root_store(&paths.ca)?;
    match role {
        TlsRole::Server => {
            let verifier =
                WebPkiClientVerifier::builder(Arc::new(roots)).build().map_err(tls_err)?;
            let config = ServerConfig::builder()
                .with_client_cert_verifier(verifier)
                .with_single_cert(certs, key)
                .map_err(tls_err)?;
            let conn = ServerConnection::new(Arc::new(config)).map_err(tls_err)?;
            Ok(Box::new(StreamOwned::new(conn, stream)))
        }
        TlsRole::Client => {
            let config = ClientConfig::builder()
                .with_root_certificates(roots)
                .with_client_auth_cert(certs, key)
                .map_err(tls_err)?;
            let name = ServerName::try_from(paths.server_name.clone()).map_err(tls_err)?;
            let conn = ClientConnection::new(Arc::new(config), name).map_err(tls_err)?;
            Ok(Box::new(StreamOwned::new(conn, stream)))
        }
    }
}
