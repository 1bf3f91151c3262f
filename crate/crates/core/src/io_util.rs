use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;

use crate::error::{Error, Result};

/// Opens a text input, transparently decompressing `.gz` files.
pub(crate) fn open_input(what: &'static str, path: &Path) -> Result<Box<dyn BufRead + Send>> {
    let file = File::open(path).map_err(|e| Error::io(what, path, e))?;
    let gz = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("gz"));
    Ok(if gz {
        Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::with_capacity(1 << 16, file))
    })
}

pub(crate) fn create_output(what: &'static str, path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(what, parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(what, path, e))?;
    Ok(BufWriter::new(file))
}

pub(crate) fn write_file(what: &'static str, path: &Path, contents: &[u8]) -> Result<()> {
    let mut out = create_output(what, path)?;
    out.write_all(contents)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(what, path, e))
}

/// Strips a UTF-8 byte order mark and surrounding whitespace from a header.
pub(crate) fn clean_header(line: &str) -> &str {
    line.trim_start_matches('\u{feff}').trim()
}
