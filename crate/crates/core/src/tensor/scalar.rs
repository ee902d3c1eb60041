use num_traits::Float;

/// Element type for tensors: f32 (training default) or f64 (gradient
/// checks). Matrix products are delegated to matrixmultiply's packed
/// kernels through [`Scalar::gemm`].
pub trait Scalar:
    Float + std::fmt::Debug + std::fmt::Display + std::iter::Sum + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;

    /// C = alpha * A . B + beta * C for row-major contiguous slices.
    #[allow(clippy::too_many_arguments)]
    ///
    /// A is m x k (stored k x m when `a_trans`), B is k x n (stored
    /// n x k when `b_trans`), C is m x n.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Row stride and column stride of a logical rows x cols matrix; when
    // transposed the storage is cols x rows row-major.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($ty:ty, $gemm:path) => {
        impl Scalar for $ty {
            fn from_f64(v: f64) -> Self {
                v as $ty
            }

            fn into_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "gemm: A length");
                assert_eq!(b.len(), k * n, "gemm: B length");
                assert_eq!(c.len(), m * n, "gemm: C length");
                let (rsa, csa) = strides(m, k, a_trans);
                let (rsb, csb) = strides(k, n, b_trans);
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
