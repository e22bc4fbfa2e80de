//! C ABI over the sqltree grammar tools and trained checkpoints.
//!
//! Every fallible function returns a [`SqltStatus`]; on failure the message
//! is available from [`sqlt_last_error`] on the same thread. Strings handed
//! out by the library are freed with [`sqlt_string_free`], handles with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sqltree::grammar::{exact_match, parse_sql, render_sql, Grammar};
use sqltree::graphs::QuestionAnnotation;
use sqltree::model::{Model, SearchMode};
use sqltree::schema::Schema;
use sqltree::serialize::graph_to_sequence;
use sqltree::train::load_checkpoint;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqltStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidSchema = 3,
    InvalidQuestion = 4,
    ParseError = 5,
    SequenceError = 6,
    CheckpointError = 7,
    GenerationError = 8,
    Panic = 9,
}

/// A database schema.
pub struct SqltSchema(Schema);

/// A trained model loaded from a checkpoint directory.
pub struct SqltModel {
    model: Model,
    beam_width: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(SqltStatus, String);

fn fail(status: SqltStatus, e: impl std::fmt::Display) -> Fail {
    Fail(status, e.to_string())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> SqltStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            SqltStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SqltStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(SqltStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(SqltStatus::InvalidUtf8, format!("`{name}`: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(SqltStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(SqltStatus::NullArgument, format!("`{name}` is null")))
}

fn owned(s: String) -> *mut c_char {
    CString::new(s).expect("no interior nul").into_raw()
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sqlt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sqlt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a schema from JSON.
///
/// # Safety
/// `json` is a nul-terminated string; `out_schema` is writable.
#[no_mangle]
pub unsafe extern "C" fn sqlt_schema_from_json(json: *const c_char, out_schema: *mut *mut SqltSchema) -> SqltStatus {
    guard(|| {
        let slot = out(out_schema, "out_schema")?;
        let schema = Schema::from_json(text(json, "json")?).map_err(|e| fail(SqltStatus::InvalidSchema, e))?;
        *slot = Box::into_raw(Box::new(SqltSchema(schema)));
        Ok(())
    })
}

/// # Safety
/// `schema` is null or a handle from [`sqlt_schema_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sqlt_schema_free(schema: *mut SqltSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}

/// Parses `sql` against `schema` and writes its canonical rendering.
///
/// # Safety
/// Pointers are valid; `out_sql` is writable.
#[no_mangle]
pub unsafe extern "C" fn sqlt_canonicalize(
    schema: *const SqltSchema,
    sql: *const c_char,
    out_sql: *mut *mut c_char,
) -> SqltStatus {
    guard(|| {
        let slot = out(out_sql, "out_sql")?;
        let schema = &handle(schema, "schema")?.0;
        let g = Grammar::builtin();
        let ast = parse_sql(g, text(sql, "sql")?, schema).map_err(|e| fail(SqltStatus::ParseError, e))?;
        let canon = render_sql(g, &ast, schema).map_err(|e| fail(SqltStatus::ParseError, e))?;
        *slot = owned(canon);
        Ok(())
    })
}

/// Writes whether two queries are equal up to order-insensitive parts and
/// value literals.
///
/// # Safety
/// Pointers are valid; `out_match` is writable.
#[no_mangle]
pub unsafe extern "C" fn sqlt_exact_match(
    schema: *const SqltSchema,
    predicted: *const c_char,
    gold: *const c_char,
    out_match: *mut bool,
) -> SqltStatus {
    guard(|| {
        let slot = out(out_match, "out_match")?;
        let schema = &handle(schema, "schema")?.0;
        let g = Grammar::builtin();
        let p = parse_sql(g, text(predicted, "predicted")?, schema).map_err(|e| fail(SqltStatus::ParseError, e))?;
        let q = parse_sql(g, text(gold, "gold")?, schema).map_err(|e| fail(SqltStatus::ParseError, e))?;
        *slot = exact_match(g, &p, &q);
        Ok(())
    })
}

/// Writes the BFS adjacency sequence of the query's AST as a JSON array of
/// 0/1 arrays.
///
/// # Safety
/// Pointers are valid; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn sqlt_bfs_sequence(
    schema: *const SqltSchema,
    sql: *const c_char,
    window: usize,
    out_json: *mut *mut c_char,
) -> SqltStatus {
    guard(|| {
        let slot = out(out_json, "out_json")?;
        let schema = &handle(schema, "schema")?.0;
        let ast =
            parse_sql(Grammar::builtin(), text(sql, "sql")?, schema).map_err(|e| fail(SqltStatus::ParseError, e))?;
        let seq = graph_to_sequence(&ast, window).map_err(|e| fail(SqltStatus::SequenceError, e))?;
        *slot = owned(seq.to_json());
        Ok(())
    })
}

/// Loads a checkpoint directory.
///
/// # Safety
/// `dir` is a nul-terminated path; `out_model` is writable.
#[no_mangle]
pub unsafe extern "C" fn sqlt_model_load(dir: *const c_char, out_model: *mut *mut SqltModel) -> SqltStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let ckpt = load_checkpoint(Path::new(text(dir, "dir")?)).map_err(|e| fail(SqltStatus::CheckpointError, e))?;
        let model = SqltModel { model: ckpt.model, beam_width: ckpt.config.beam_width };
        *slot = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle from [`sqlt_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sqlt_model_free(model: *mut SqltModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Generates SQL for an annotated question given as JSON
/// (`{"tokens": [...], "pos": [...], "deps": [[head, dependent, label], ...]}`).
/// A `beam_width` of 0 uses the checkpoint's configured width.
///
/// # Safety
/// Pointers are valid; `out_sql` is writable.
#[no_mangle]
pub unsafe extern "C" fn sqlt_model_predict(
    model: *const SqltModel,
    schema: *const SqltSchema,
    question_json: *const c_char,
    beam_width: usize,
    out_sql: *mut *mut c_char,
) -> SqltStatus {
    guard(|| {
        let slot = out(out_sql, "out_sql")?;
        let m = handle(model, "model")?;
        let schema = &handle(schema, "schema")?.0;
        let ann: QuestionAnnotation = serde_json::from_str(text(question_json, "question_json")?)
            .map_err(|e| fail(SqltStatus::InvalidQuestion, e))?;
        let input = m.model.question_input(&ann, schema).map_err(|e| fail(SqltStatus::InvalidQuestion, e))?;
        let width = if beam_width == 0 { m.beam_width } else { beam_width };
        let gen = m
            .model
            .generate(&input, schema, SearchMode::from_width(width), m.model.config.max_nodes)
            .map_err(|e| fail(SqltStatus::GenerationError, e))?;
        let sql = render_sql(m.model.grammar(), &gen.ast, schema).map_err(|e| fail(SqltStatus::GenerationError, e))?;
        *slot = owned(sql);
        Ok(())
    })
}

/// Version of this ABI.
#[no_mangle]
pub extern "C" fn sqlt_abi_version() -> u32 {
    1
}
