//! Per-language file and line counts for the files at the main head.
//!
//! Languages are recognised by file extension (plus a few well-known file
//! names). A line of code is a non-blank line that does not start with one of
//! the language's line-comment prefixes; block comments are not stripped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::extract::{ExtractError, GitRepo, HeadEntry};

/// Display name and line-comment prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Language {
    pub name: &'static str,
    pub line_comments: &'static [&'static str],
}

const HASH: &[&str] = &["#"];
const SLASHES: &[&str] = &["//"];
const DASHES: &[&str] = &["--"];
const SEMI: &[&str] = &[";"];
const PERCENT: &[&str] = &["%"];
const NONE: &[&str] = &[];

macro_rules! lang {
    ($name:expr, $c:expr) => {
        Language {
            name: $name,
            line_comments: $c,
        }
    };
}

/// Extension (lowercase, without dot) → language.
const EXTENSIONS: &[(&str, Language)] = &[
    ("asm", lang!("Assembly", SEMI)),
    ("bash", lang!("Bourne Again Shell", HASH)),
    ("bat", lang!("DOS Batch", &["rem ", "REM ", "::"])),
    ("c", lang!("C", SLASHES)),
    ("c++", lang!("C++", SLASHES)),
    ("cc", lang!("C++", SLASHES)),
    ("cjs", lang!("JavaScript", SLASHES)),
    ("clj", lang!("Clojure", SEMI)),
    ("cljs", lang!("ClojureScript", SEMI)),
    ("cls", lang!("TeX", PERCENT)),
    ("cmake", lang!("CMake", HASH)),
    ("cmd", lang!("DOS Batch", &["rem ", "REM ", "::"])),
    ("cpp", lang!("C++", SLASHES)),
    ("cs", lang!("C#", SLASHES)),
    ("css", lang!("CSS", NONE)),
    ("cu", lang!("CUDA", SLASHES)),
    ("cxx", lang!("C++", SLASHES)),
    ("dart", lang!("Dart", SLASHES)),
    ("el", lang!("Lisp", SEMI)),
    ("erl", lang!("Erlang", PERCENT)),
    ("ex", lang!("Elixir", HASH)),
    ("exs", lang!("Elixir", HASH)),
    ("f90", lang!("Fortran 90", &["!"])),
    ("f95", lang!("Fortran 95", &["!"])),
    ("frag", lang!("GLSL", SLASHES)),
    ("fs", lang!("F#", SLASHES)),
    ("glsl", lang!("GLSL", SLASHES)),
    ("go", lang!("Go", SLASHES)),
    ("gradle", lang!("Gradle", SLASHES)),
    ("groovy", lang!("Groovy", SLASHES)),
    ("h", lang!("C/C++ Header", SLASHES)),
    ("hh", lang!("C/C++ Header", SLASHES)),
    ("hpp", lang!("C/C++ Header", SLASHES)),
    ("hs", lang!("Haskell", DASHES)),
    ("htm", lang!("HTML", NONE)),
    ("html", lang!("HTML", NONE)),
    ("hxx", lang!("C/C++ Header", SLASHES)),
    ("ipynb", lang!("Jupyter Notebook", NONE)),
    ("java", lang!("Java", SLASHES)),
    ("jl", lang!("Julia", HASH)),
    ("js", lang!("JavaScript", SLASHES)),
    ("json", lang!("JSON", NONE)),
    ("jsx", lang!("JSX", SLASHES)),
    ("kt", lang!("Kotlin", SLASHES)),
    ("kts", lang!("Kotlin", SLASHES)),
    ("less", lang!("LESS", SLASHES)),
    ("lisp", lang!("Lisp", SEMI)),
    ("lua", lang!("Lua", DASHES)),
    ("m", lang!("Objective-C", SLASHES)),
    ("markdown", lang!("Markdown", NONE)),
    ("md", lang!("Markdown", NONE)),
    ("mjs", lang!("JavaScript", SLASHES)),
    ("mk", lang!("make", HASH)),
    ("ml", lang!("OCaml", NONE)),
    ("mli", lang!("OCaml", NONE)),
    ("mm", lang!("Objective-C++", SLASHES)),
    ("nim", lang!("Nim", HASH)),
    ("pas", lang!("Pascal", SLASHES)),
    ("php", lang!("PHP", &["//", "#"])),
    ("pl", lang!("Perl", HASH)),
    ("pm", lang!("Perl", HASH)),
    ("proto", lang!("Protocol Buffers", SLASHES)),
    ("ps1", lang!("PowerShell", HASH)),
    ("py", lang!("Python", HASH)),
    ("pyi", lang!("Python", HASH)),
    ("pyw", lang!("Python", HASH)),
    ("r", lang!("R", HASH)),
    ("rb", lang!("Ruby", HASH)),
    ("rs", lang!("Rust", SLASHES)),
    ("rst", lang!("reStructuredText", NONE)),
    ("sass", lang!("Sass", SLASHES)),
    ("scala", lang!("Scala", SLASHES)),
    ("scm", lang!("Scheme", SEMI)),
    ("scss", lang!("SCSS", SLASHES)),
    ("sh", lang!("Bourne Shell", HASH)),
    ("sol", lang!("Solidity", SLASHES)),
    ("sql", lang!("SQL", DASHES)),
    ("sty", lang!("TeX", PERCENT)),
    ("sv", lang!("Verilog-SystemVerilog", SLASHES)),
    ("svelte", lang!("Svelte", NONE)),
    ("swift", lang!("Swift", SLASHES)),
    ("tcl", lang!("Tcl/Tk", HASH)),
    ("tex", lang!("TeX", PERCENT)),
    ("toml", lang!("TOML", HASH)),
    ("ts", lang!("TypeScript", SLASHES)),
    ("tsx", lang!("TypeScript", SLASHES)),
    ("v", lang!("Verilog-SystemVerilog", SLASHES)),
    ("vert", lang!("GLSL", SLASHES)),
    ("vhd", lang!("VHDL", DASHES)),
    ("vhdl", lang!("VHDL", DASHES)),
    ("vue", lang!("Vuejs Component", SLASHES)),
    ("xml", lang!("XML", NONE)),
    ("yaml", lang!("YAML", HASH)),
    ("yml", lang!("YAML", HASH)),
    ("zig", lang!("Zig", SLASHES)),
    ("zsh", lang!("zsh", HASH)),
];

const FILE_NAMES: &[(&str, Language)] = &[
    ("CMakeLists.txt", lang!("CMake", HASH)),
    ("Dockerfile", lang!("Dockerfile", HASH)),
    ("GNUmakefile", lang!("make", HASH)),
    ("Makefile", lang!("make", HASH)),
    ("makefile", lang!("make", HASH)),
];

/// Language of a repository path, if recognised.
pub fn language_for_path(path: &str) -> Option<Language> {
    let file = path.rsplit('/').next().unwrap_or(path);
    if let Some((_, l)) = FILE_NAMES.iter().find(|(n, _)| *n == file) {
        return Some(*l);
    }
    let (stem, ext) = file.rsplit_once('.')?;
    if stem.is_empty() {
        return None;
    }
    let ext = ext.to_ascii_lowercase();
    EXTENSIONS
        .binary_search_by(|(e, _)| e.cmp(&ext.as_str()))
        .ok()
        .map(|i| EXTENSIONS[i].1)
}

/// True if the blob looks binary (NUL byte within the first 8000 bytes).
pub fn is_binary(content: &[u8]) -> bool {
    content.iter().take(8000).any(|b| *b == 0)
}

/// Non-blank lines that are not pure line comments.
pub fn count_loc(content: &[u8], lang: &Language) -> u64 {
    String::from_utf8_lossy(content)
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .filter(|l| !lang.line_comments.iter().any(|p| l.starts_with(p)))
        .count() as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageCount {
    pub files: u64,
    pub loc: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageTally {
    pub languages: BTreeMap<String, LanguageCount>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<String>,
}

impl LanguageTally {
    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }

    pub fn total_files(&self) -> u64 {
        self.languages.values().map(|c| c.files).sum()
    }

    /// Add one file. `None` content means the blob could not be read.
    pub fn add_file(&mut self, path: &str, content: Option<&[u8]>) {
        let Some(lang) = language_for_path(path) else { return };
        let Some(content) = content else {
            self.annotations.push(format!("unreadable blob: {path}"));
            return;
        };
        if is_binary(content) {
            return;
        }
        let entry = self.languages.entry(lang.name.to_string()).or_default();
        entry.files += 1;
        entry.loc += count_loc(content, &lang);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageMeasure {
    Loc,
    Files,
}

/// Language with the largest count under `by`; ties go to the
/// lexicographically smallest name.
pub fn top_language(tally: &LanguageTally, by: LanguageMeasure) -> Option<String> {
    let mut best: Option<(&String, u64)> = None;
    for (name, c) in &tally.languages {
        let v = match by {
            LanguageMeasure::Loc => c.loc,
            LanguageMeasure::Files => c.files,
        };
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((name, v));
        }
    }
    best.map(|(n, _)| n.clone())
}

/// Tally `(path, content)` pairs.
pub fn tally_files<'a>(files: impl IntoIterator<Item = (&'a str, Option<&'a [u8]>)>) -> LanguageTally {
    let mut t = LanguageTally::default();
    for (path, content) in files {
        t.add_file(path, content);
    }
    t
}

const BLOB_BATCH: usize = 512;

/// Tally the recognised head files of a repository, reading blobs in batches.
pub fn tally_languages(repo: &GitRepo, head: &[HeadEntry]) -> Result<LanguageTally, ExtractError> {
    let wanted: Vec<&HeadEntry> = head.iter().filter(|e| language_for_path(&e.path).is_some()).collect();
    let mut tally = LanguageTally::default();
    for chunk in wanted.chunks(BLOB_BATCH) {
        let oids: Vec<&str> = chunk.iter().map(|e| e.oid.as_str()).collect();
        let blobs = repo.read_blobs(&oids)?;
        for (entry, blob) in chunk.iter().zip(blobs) {
            tally.add_file(&entry.path, blob.as_deref());
        }
    }
    Ok(tally)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extension_table_is_sorted_and_unique() {
        for w in EXTENSIONS.windows(2) {
            assert!(w[0].0 < w[1].0, "{} !< {}", w[0].0, w[1].0);
        }
        assert!(EXTENSIONS.len() >= 60);
    }

    #[test]
    fn path_recognition() {
        assert_eq!(language_for_path("src/main.PY").unwrap().name, "Python");
        assert_eq!(language_for_path("a/b/Makefile").unwrap().name, "make");
        assert_eq!(language_for_path("include/x.h").unwrap().name, "C/C++ Header");
        assert!(language_for_path(".bashrc").is_none());
        assert!(language_for_path("notes.txt").is_none());
        assert!(language_for_path("LICENSE").is_none());
    }

    #[test]
    fn loc_excludes_blank_and_comment_lines() {
        let py = language_for_path("x.py").unwrap();
        assert_eq!(count_loc(b"# c\nimport os\n\n   \nx = 1  # tail\n", &py), 2);
        assert_eq!(count_loc(b"\n\n  \n", &py), 0);
    }

    #[test]
    fn tally_and_top_language() {
        let main_py = "x = 1\n".repeat(100);
        let app_js = "let y;\n".repeat(50);
        let t = tally_files([
            ("main.py", Some(main_py.as_bytes())),
            ("app.js", Some(app_js.as_bytes())),
            ("logo.png", Some(&b"\x89PNG\0\0"[..])),
            ("blob.c", Some(&b"\0\0binary"[..])),
        ]);
        assert_eq!(t.languages["Python"], LanguageCount { files: 1, loc: 100 });
        assert_eq!(t.languages["JavaScript"], LanguageCount { files: 1, loc: 50 });
        assert!(!t.languages.contains_key("C"));
        assert_eq!(top_language(&t, LanguageMeasure::Loc).as_deref(), Some("Python"));
    }

    #[test]
    fn ties_break_lexicographically() {
        let t = tally_files([("a.cpp", Some(&b"x\n"[..])), ("b.c", Some(&b"y\n"[..]))]);
        assert_eq!(top_language(&t, LanguageMeasure::Loc).as_deref(), Some("C"));
        assert_eq!(top_language(&t, LanguageMeasure::Files).as_deref(), Some("C"));
        assert_eq!(top_language(&LanguageTally::default(), LanguageMeasure::Loc), None);
    }

    #[test]
    fn blank_file_counts_as_file_with_zero_loc() {
        let t = tally_files([("empty.rs", Some(&b"\n\n\n"[..]))]);
        assert_eq!(t.languages["Rust"], LanguageCount { files: 1, loc: 0 });
    }

    #[test]
    fn unreadable_blob_is_annotated() {
        let t = tally_files([("gone.rs", None)]);
        assert!(t.is_empty());
        assert_eq!(t.annotations.len(), 1);
    }
}
