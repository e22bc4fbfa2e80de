use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use sqltree::corpus::{generate_corpus, CorpusConfig};
use sqltree::schema::scientists_schema;
use sqltree::train::{TrainConfig, Trainer};
use sqltree_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sqlt_last_error()) }.to_str().unwrap().to_string()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    sqlt_string_free(p);
    s
}

fn schema() -> *mut SqltSchema {
    let json = c(&scientists_schema().to_json());
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sqlt_schema_from_json(json.as_ptr(), &mut h) }, SqltStatus::Ok);
    h
}

#[test]
fn canonicalize_and_exact_match() {
    let s = schema();
    unsafe {
        let mut out = ptr::null_mut();
        let sql = c("select scientists.name from scientists where scientists.ssn = 3");
        assert_eq!(sqlt_canonicalize(s, sql.as_ptr(), &mut out), SqltStatus::Ok);
        let canon = take(out);
        assert!(canon.starts_with("SELECT scientists.name FROM scientists WHERE"), "{canon}");

        let mut m = false;
        let other = c("SELECT scientists.name FROM scientists WHERE scientists.ssn = 99");
        assert_eq!(sqlt_exact_match(s, sql.as_ptr(), other.as_ptr(), &mut m), SqltStatus::Ok);
        assert!(m);
        let different = c("SELECT scientists.ssn FROM scientists");
        assert_eq!(sqlt_exact_match(s, sql.as_ptr(), different.as_ptr(), &mut m), SqltStatus::Ok);
        assert!(!m);

        let bad = c("SELECT nothing FROM nowhere");
        assert_eq!(sqlt_canonicalize(s, bad.as_ptr(), &mut out), SqltStatus::ParseError);
        assert!(!last_error().is_empty());
        sqlt_schema_free(s);
    }
}

#[test]
fn bfs_sequence_json() {
    let s = schema();
    unsafe {
        let sql = c("SELECT scientists.name FROM scientists");
        let mut out = ptr::null_mut();
        assert_eq!(sqlt_bfs_sequence(s, sql.as_ptr(), 30, &mut out), SqltStatus::Ok);
        let vectors: Vec<Vec<u8>> = serde_json::from_str(&take(out)).unwrap();
        assert!(!vectors.is_empty());
        for (i, v) in vectors.iter().enumerate() {
            assert_eq!(v.len(), (i + 1).min(30));
            assert_eq!(v.iter().filter(|&&b| b == 1).count(), 1);
        }
        assert_eq!(sqlt_bfs_sequence(s, sql.as_ptr(), 0, &mut out), SqltStatus::SequenceError);
        sqlt_schema_free(s);
    }
}

#[test]
fn null_and_malformed_arguments() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(sqlt_schema_from_json(ptr::null(), &mut h), SqltStatus::NullArgument);
        assert!(last_error().contains("json"));
        let junk = c("{not json");
        assert_eq!(sqlt_schema_from_json(junk.as_ptr(), &mut h), SqltStatus::InvalidSchema);
        assert!(h.is_null());
        let mut out = ptr::null_mut();
        let sql = c("SELECT 1");
        assert_eq!(sqlt_canonicalize(ptr::null(), sql.as_ptr(), &mut out), SqltStatus::NullArgument);
        let invalid = [0xffu8, 0];
        let s = schema();
        assert_eq!(sqlt_canonicalize(s, invalid.as_ptr().cast(), &mut out), SqltStatus::InvalidUtf8);
        let missing = c("/nonexistent/checkpoint");
        let mut m = ptr::null_mut();
        assert_eq!(sqlt_model_load(missing.as_ptr(), &mut m), SqltStatus::CheckpointError);
        sqlt_schema_free(s);
        sqlt_schema_free(ptr::null_mut());
        sqlt_model_free(ptr::null_mut());
        sqlt_string_free(ptr::null_mut());
    }
    assert_eq!(sqlt_abi_version(), 1);
}

#[test]
fn load_and_predict() {
    let corpus =
        generate_corpus(&CorpusConfig { seed: 3, train_examples: 8, dev_examples: 2, ..Default::default() }).unwrap();
    let cfg = TrainConfig {
        d_model: 8,
        layers: 1,
        heads: 2,
        d_ff: 16,
        gat_layers: 1,
        batch_size: 4,
        max_steps: 2,
        beam_width: 2,
        checkpoint_interval: 0,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    Trainer::new(cfg, &corpus.train).unwrap().run(dir.path(), None).unwrap();
    let e = &corpus.train.examples[0];
    let schema_json = c(&corpus.train.schema(&e.db_id).unwrap().to_json());
    let question = c(&serde_json::to_string(&e.question).unwrap());
    let path = c(dir.path().join("checkpoint").to_str().unwrap());
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(sqlt_model_load(path.as_ptr(), &mut model), SqltStatus::Ok, "{}", last_error());
        let mut s = ptr::null_mut();
        assert_eq!(sqlt_schema_from_json(schema_json.as_ptr(), &mut s), SqltStatus::Ok);
        let mut out = ptr::null_mut();
        match sqlt_model_predict(model, s, question.as_ptr(), 0, &mut out) {
            SqltStatus::Ok => {
                let sql = take(out);
                let mut canon = ptr::null_mut();
                let q = c(&sql);
                assert_eq!(sqlt_canonicalize(s, q.as_ptr(), &mut canon), SqltStatus::Ok);
                assert_eq!(take(canon), sql);
            }
            SqltStatus::GenerationError => assert!(last_error().contains("incomplete tree"), "{}", last_error()),
            other => panic!("{other:?}: {}", last_error()),
        }
        let bad = c(r#"{"tokens": ["x"]}"#);
        assert_eq!(sqlt_model_predict(model, s, bad.as_ptr(), 1, &mut out), SqltStatus::InvalidQuestion);
        sqlt_schema_free(s);
        sqlt_model_free(model);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sqltree.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["sqlt_canonicalize", "sqlt_exact_match", "sqlt_bfs_sequence", "sqlt_model_load", "sqlt_model_predict"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"sqltree.h\"\nint main(void) { SqltSchema *s = 0; return sqlt_schema_from_json(\"{}\", &s) == SQLT_STATUS_OK; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .expect("a C compiler");
    assert!(status.success());
}
