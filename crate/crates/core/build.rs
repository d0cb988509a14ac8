fn main() {
    // System OpenBLAS carries BLAS + full LAPACK; the `lapack` crate only
    // declares the FFI symbols.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
