//! Log lines go to stderr and to `run.log` in the output directory.
//! Timestamps appear only here, never in the result files.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

use crate::commands::CliError;

struct Tee {
    file: File,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        self.file.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stderr().flush()?;
        self.file.flush()
    }
}

pub fn init(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(e, out))?;
    let path = out.join("run.log");
    let file = File::create(&path).map_err(|e| CliError::io(e, &path))?;
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Pipe(Box::new(Tee { file })))
        .format_timestamp_millis()
        .init();
    Ok(())
}
