use crate::arena::HavenHandle;

/// Errors raised by arena, protection and injection operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HavenError {
    /// Invalid construction parameters.
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    /// The free list cannot satisfy a request.
    #[error("out of memory: need {needed} pages, {free} free")]
    OutOfMemory {
        /// Pages the request required.
        needed: usize,
        /// Pages left on the free list.
        free: usize,
    },
    /// The handle refers to a destroyed haven.
    #[error("use of destroyed haven {0:?}")]
    UseAfterDestroy(HavenHandle),
    /// The handle was never issued by this arena.
    #[error("unknown haven {0:?}")]
    UnknownHaven(HavenHandle),
    /// Zero-byte allocation.
    #[error("allocation size must be non-zero")]
    ZeroSizedAlloc,
    /// Offset not aligned to a word boundary.
    #[error("offset {offset} is not word aligned")]
    Misaligned {
        /// Offending byte offset.
        offset: usize,
    },
    /// Access beyond the allocated extent.
    #[error("offset {offset} (+{len}) outside extent {extent}")]
    OutOfBounds {
        /// Byte offset of the access.
        offset: usize,
        /// Length of the access in bytes.
        len: usize,
        /// Allocated extent of the haven.
        extent: usize,
    },
    /// Recovery requested on a haven that is not parity protected and robust.
    #[error("haven {0:?} is not under robust parity protection")]
    NotProtected(HavenHandle),
    /// More than one word of a haven failed its parity check.
    #[error("unrecoverable corruption in haven {haven:?}: words {first} and {second} both violate parity")]
    Unrecoverable {
        /// Haven holding the corrupted words.
        haven: HavenHandle,
        /// First violating word index.
        first: usize,
        /// Second violating word index.
        second: usize,
    },
    /// A fault event pointed outside the backing store.
    #[error("fault offset {offset} outside backing store of {len} bytes")]
    InjectOutOfRange {
        /// Byte offset of the event.
        offset: usize,
        /// Size of the backing store.
        len: usize,
    },
    /// Vectors or matrices of incompatible shape.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch {
        /// Left operand length.
        left: usize,
        /// Right operand length.
        right: usize,
    },
}
