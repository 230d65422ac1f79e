/* Direct 3x3 convolution kernels (stride 1, input pre-padded by 1).
 *
 * Layouts are dense row-major:
 *   xp  (N, Ci, H+2, W+2)   padded input
 *   w   (Co, Ci, 3, 3)
 *   out (N, Co, H, W)       accumulated into (caller initialises with the bias)
 *   dw  (Co, Ci, 3, 3)      overwritten
 *
 * Every reduction runs in a fixed order, so results are bit-reproducible for a
 * given build.
 */
#ifndef ASYMSEG_CONVK_H
#define ASYMSEG_CONVK_H

#include <stddef.h>
#include <string.h>
#if defined(__SSE__)
#include <xmmintrin.h>
#endif

/* Flush denormals to zero inside the kernels: vanishing gradients otherwise hit
 * the slow microcode path. The caller's floating-point mode is restored. */
static unsigned int asymseg_ftz_enter(void)
{
#if defined(__SSE__)
    unsigned int old = _mm_getcsr();
    _mm_setcsr(old | 0x8040u); /* FTZ | DAZ */
    return old;
#else
    return 0u;
#endif
}

static void asymseg_ftz_exit(unsigned int old)
{
#if defined(__SSE__)
    _mm_setcsr(old);
#else
    (void)old;
#endif
}

#define ASYMSEG_LANES 8
#define ASYMSEG_COBLK 4

#define ASYMSEG_DEFINE_CONV3(T, SUF)                                                 \
static void conv3_fwd_##SUF(const T *restrict xp, const T *restrict w,              \
                            T *restrict out, ptrdiff_t N, ptrdiff_t Ci,             \
                            ptrdiff_t Co, ptrdiff_t H, ptrdiff_t W)                 \
{                                                                                   \
    const ptrdiff_t Wp = W + 2, plane = (H + 2) * Wp, HW = H * W;                   \
    const ptrdiff_t Cb = Co - Co % ASYMSEG_COBLK;                                   \
    for (ptrdiff_t n = 0; n < N; n++) {                                             \
        for (ptrdiff_t co = 0; co < Cb; co += ASYMSEG_COBLK) {                      \
            T *restrict ob = out + (n * Co + co) * HW;                              \
            for (ptrdiff_t ci = 0; ci < Ci; ci++) {                                 \
                T k[ASYMSEG_COBLK][9];                                              \
                for (int j = 0; j < ASYMSEG_COBLK; j++)                             \
                    for (int t = 0; t < 9; t++)                                     \
                        k[j][t] = w[((co + j) * Ci + ci) * 9 + t];                  \
                const T *restrict ib = xp + (n * Ci + ci) * plane;                  \
                for (ptrdiff_t y = 0; y < H; y++) {                                 \
                    T *restrict o = ob + y * W;                                     \
                    const T *restrict r0 = ib + y * Wp;                             \
                    const T *restrict r1 = r0 + Wp;                                 \
                    const T *restrict r2 = r1 + Wp;                                 \
                    for (ptrdiff_t x = 0; x < W; x++) {                             \
                        const T a0 = r0[x], a1 = r0[x + 1], a2 = r0[x + 2];         \
                        const T b0 = r1[x], b1 = r1[x + 1], b2 = r1[x + 2];         \
                        const T c0 = r2[x], c1 = r2[x + 1], c2 = r2[x + 2];         \
                        for (int j = 0; j < ASYMSEG_COBLK; j++)                     \
                            o[j * HW + x] += k[j][0] * a0 + k[j][1] * a1            \
                                + k[j][2] * a2 + k[j][3] * b0 + k[j][4] * b1        \
                                + k[j][5] * b2 + k[j][6] * c0 + k[j][7] * c1        \
                                + k[j][8] * c2;                                     \
                    }                                                               \
                }                                                                   \
            }                                                                       \
        }                                                                           \
        for (ptrdiff_t co = Cb; co < Co; co++) {                                    \
            T *restrict ob = out + (n * Co + co) * HW;                              \
            for (ptrdiff_t ci = 0; ci < Ci; ci++) {                                 \
                const T *restrict k = w + (co * Ci + ci) * 9;                       \
                const T k0 = k[0], k1 = k[1], k2 = k[2], k3 = k[3], k4 = k[4],      \
                        k5 = k[5], k6 = k[6], k7 = k[7], k8 = k[8];                 \
                const T *restrict ib = xp + (n * Ci + ci) * plane;                  \
                for (ptrdiff_t y = 0; y < H; y++) {                                 \
                    T *restrict o = ob + y * W;                                     \
                    const T *restrict r0 = ib + y * Wp;                             \
                    const T *restrict r1 = r0 + Wp;                                 \
                    const T *restrict r2 = r1 + Wp;                                 \
                    for (ptrdiff_t x = 0; x < W; x++)                               \
                        o[x] += k0 * r0[x] + k1 * r0[x + 1] + k2 * r0[x + 2]        \
                              + k3 * r1[x] + k4 * r1[x + 1] + k5 * r1[x + 2]        \
                              + k6 * r2[x] + k7 * r2[x + 1] + k8 * r2[x + 2];       \
                }                                                                   \
            }                                                                       \
        }                                                                           \
    }                                                                               \
}                                                                                   \
                                                                                    \
static void conv3_dw_##SUF(const T *restrict xp, const T *restrict dy,              \
                           T *restrict dw, ptrdiff_t N, ptrdiff_t Ci,               \
                           ptrdiff_t Co, ptrdiff_t H, ptrdiff_t W)                  \
{                                                                                   \
    /* two output channels per pass share the nine input loads */                   \
    const ptrdiff_t Wp = W + 2, plane = (H + 2) * Wp, HW = H * W;                   \
    T acc[2][9][ASYMSEG_LANES];                                                     \
    for (ptrdiff_t co = 0; co < Co; co += 2)                                        \
    for (ptrdiff_t ci = 0; ci < Ci; ci++) {                                         \
        const int nb = co + 1 < Co ? 2 : 1;                                         \
        memset(acc, 0, sizeof(acc));                                                \
        for (ptrdiff_t n = 0; n < N; n++) {                                         \
            const T *restrict ga = dy + (n * Co + co) * HW;                         \
            const T *restrict gc = nb == 2 ? ga + HW : ga;                          \
            const T *restrict ib = xp + (n * Ci + ci) * plane;                      \
            for (ptrdiff_t y = 0; y < H; y++) {                                     \
                const T *restrict g0 = ga + y * W;                                  \
                const T *restrict g1 = gc + y * W;                                  \
                const T *restrict r0 = ib + y * Wp;                                 \
                const T *restrict r1 = r0 + Wp;                                     \
                const T *restrict r2 = r1 + Wp;                                     \
                ptrdiff_t x0 = 0;                                                   \
                for (; x0 + ASYMSEG_LANES <= W; x0 += ASYMSEG_LANES)                \
                    for (int l = 0; l < ASYMSEG_LANES; l++) {                       \
                        const ptrdiff_t x = x0 + l;                                 \
                        const T d = g0[x], e = g1[x];                               \
                        const T a0 = r0[x], a1 = r0[x + 1], a2 = r0[x + 2];         \
                        const T b0 = r1[x], b1 = r1[x + 1], b2 = r1[x + 2];         \
                        const T c0 = r2[x], c1 = r2[x + 1], c2 = r2[x + 2];         \
                        acc[0][0][l] += d * a0; acc[0][1][l] += d * a1;             \
                        acc[0][2][l] += d * a2; acc[0][3][l] += d * b0;             \
                        acc[0][4][l] += d * b1; acc[0][5][l] += d * b2;             \
                        acc[0][6][l] += d * c0; acc[0][7][l] += d * c1;             \
                        acc[0][8][l] += d * c2;                                     \
                        acc[1][0][l] += e * a0; acc[1][1][l] += e * a1;             \
                        acc[1][2][l] += e * a2; acc[1][3][l] += e * b0;             \
                        acc[1][4][l] += e * b1; acc[1][5][l] += e * b2;             \
                        acc[1][6][l] += e * c0; acc[1][7][l] += e * c1;             \
                        acc[1][8][l] += e * c2;                                     \
                    }                                                               \
                for (; x0 < W; x0++) {                                              \
                    const int l = (int)(x0 % ASYMSEG_LANES);                        \
                    const T *rr[3] = {r0, r1, r2};                                  \
                    for (int t = 0; t < 9; t++) {                                   \
                        const T v = rr[t / 3][x0 + t % 3];                          \
                        acc[0][t][l] += g0[x0] * v;                                 \
                        acc[1][t][l] += g1[x0] * v;                                 \
                    }                                                               \
                }                                                                   \
            }                                                                       \
        }                                                                           \
        for (int j = 0; j < nb; j++)                                                \
            for (int k = 0; k < 9; k++) {                                           \
                T s = 0;                                                            \
                for (int l = 0; l < ASYMSEG_LANES; l++) s += acc[j][k][l];          \
                dw[((co + j) * Ci + ci) * 9 + k] = s;                               \
            }                                                                       \
    }                                                                               \
}

ASYMSEG_DEFINE_CONV3(float, f32)
ASYMSEG_DEFINE_CONV3(double, f64)

#endif
