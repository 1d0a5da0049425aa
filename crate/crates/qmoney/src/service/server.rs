//! Blocking TCP front end for the bank: one connection per client thread,
//! one request line in, one response line out.

use crate::service::bank::Bank;
use crate::service::ServiceError;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

/// A running bank service bound to a local address.
pub struct Server {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl Server {
    /// Bind `addr` (use port 0 for an ephemeral port) and start accepting.
    pub fn start(bank: Arc<Bank>, addr: &str) -> Result<Self, ServiceError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&shutdown);
        let accept_thread = std::thread::spawn(move || accept_loop(listener, bank, flag));
        log::info!("bank service listening on {local}");
        Ok(Self { addr: local, shutdown, accept_thread: Some(accept_thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting new connections and join the accept loop. Connections
    /// already open finish on their own threads.
    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

fn accept_loop(listener: TcpListener, bank: Arc<Bank>, shutdown: Arc<AtomicBool>) {
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::debug!("connection from {peer}");
                let bank = Arc::clone(&bank);
                std::thread::spawn(move || {
                    if let Err(err) = serve_connection(stream, &bank) {
                        log::debug!("connection ended: {err}");
                    }
                });
            }
            Err(err) if err.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(err) => {
                log::warn!("accept failed: {err}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn serve_connection(stream: TcpStream, bank: &Bank) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = bank.handle_line(&line);
        writer.write_all(response.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Run the service until the process is terminated.
pub fn serve_forever(bank: Arc<Bank>, addr: &str) -> Result<(), ServiceError> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    log::info!("bank service listening on {local}");
    eprintln!("listening on {local}");
    for stream in listener.incoming() {
        match stream {
            Ok(stream) => {
                let bank = Arc::clone(&bank);
                std::thread::spawn(move || {
                    let _ = serve_connection(stream, &bank);
                });
            }
            Err(err) => log::warn!("accept failed: {err}"),
        }
    }
    Ok(())
}
