use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{IngestError, Result};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Opens a file for buffered reading, transparently gunzipping it when it
/// starts with the gzip magic bytes.
pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let mut reader = BufReader::new(File::open(path).map_err(io_err)?);
    let head = reader.fill_buf().map_err(io_err)?;
    if head.starts_with(&GZIP_MAGIC) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

/// Buffered file sink, optionally gzip-compressed. Call [`Output::finish`]
/// so that flush and trailer errors are reported instead of lost on drop.
pub enum Output {
    Plain(BufWriter<File>),
    Gzip(GzEncoder<BufWriter<File>>),
}

impl Output {
    pub fn finish(self) -> std::io::Result<()> {
        match self {
            Output::Plain(mut w) => w.flush(),
            Output::Gzip(g) => g.finish()?.flush(),
        }
    }
}

impl Write for Output {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        match self {
            Output::Plain(w) => w.write(buf),
            Output::Gzip(w) => w.write(buf),
        }
    }

    fn flush(&mut self) -> std::io::Result<()> {
        match self {
            Output::Plain(w) => w.flush(),
            Output::Gzip(w) => w.flush(),
        }
    }
}

/// Creates (truncating) a file for writing; a `.gz` extension selects gzip.
pub fn open_output(path: &Path) -> Result<Output> {
    let file = File::create(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let inner = BufWriter::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Output::Gzip(GzEncoder::new(inner, Compression::default())))
    } else {
        Ok(Output::Plain(inner))
    }
}
