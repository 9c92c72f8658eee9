//! Verification suite (in progress).
