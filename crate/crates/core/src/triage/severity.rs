//! Fixed exploitability rule table.

use crate::model::{AddressClass, CrashKind, MemoryAccess, Severity, SeverityClass};

const OVERFLOWS: &[&str] = &[
    "heap-buffer-overflow",
    "stack-buffer-overflow",
    "global-buffer-overflow",
    "stack-buffer-underflow",
    "buffer-overflow",
];
const USE_AFTER_FREE: &[&str] = &["heap-use-after-free", "use-after-free"];
const BENIGN: &[&str] = &["leak", "allocation-size-too-big", "out-of-memory"];

pub fn estimate_severity(kind: &CrashKind) -> Severity {
    match kind {
        CrashKind::PythonException { exc_type, .. } => {
            let short_description = match exc_type.as_str() {
                "MemoryError" => "MemoryError (resource exhaustion)".to_string(),
                "RecursionError" => "RecursionError (stack exhaustion)".to_string(),
                other => other.to_string(),
            };
            Severity {
                class: SeverityClass::NotExploitable,
                short_description,
            }
        }
        CrashKind::SanitizerError {
            category,
            access,
            address_class,
        } => Severity {
            class: sanitizer_class(category, *access, *address_class),
            short_description: category.clone(),
        },
    }
}

fn sanitizer_class(
    category: &str,
    access: Option<MemoryAccess>,
    address: Option<AddressClass>,
) -> SeverityClass {
    use SeverityClass::*;
    let is = |set: &[&str]| set.contains(&category);
    match (category, access, address) {
        ("double-free", _, _) => Exploitable,
        (_, Some(MemoryAccess::Write), _) if is(OVERFLOWS) || is(USE_AFTER_FREE) => Exploitable,
        (_, Some(MemoryAccess::Read), _) if is(OVERFLOWS) || is(USE_AFTER_FREE) => {
            ProbablyExploitable
        }
        ("SEGV", _, Some(AddressClass::Null | AddressClass::NearNull)) => NotExploitable,
        ("SEGV", _, _) => ProbablyExploitable,
        _ if is(BENIGN) => NotExploitable,
        _ => ProbablyExploitable,
    }
}
