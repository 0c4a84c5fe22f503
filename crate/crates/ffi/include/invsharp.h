#ifndef INVSHARP_H
#define INVSHARP_H

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum InvsharpStatus {
  INVSHARP_STATUS_OK = 0,
  INVSHARP_STATUS_NULL_POINTER = 1,
  INVSHARP_STATUS_INVALID_ARGUMENT = 2,
  INVSHARP_STATUS_IO = 3,
  INVSHARP_STATUS_FORMAT = 4,
  INVSHARP_STATUS_SHAPE_MISMATCH = 5,
  INVSHARP_STATUS_NON_FINITE = 6,
  INVSHARP_STATUS_PANIC = 7,
} InvsharpStatus;

// Opaque network handle.
typedef struct InvsharpNet InvsharpNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Load a checkpoint. On success `*out` owns a handle to release with
// [`invsharp_net_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum InvsharpStatus invsharp_net_load(const char *path, struct InvsharpNet **out);

// A network whose residual branches are all zero, so both passes are the
// identity. Useful for wiring tests.
//
// # Safety
// `out` must be a valid pointer.
enum InvsharpStatus invsharp_net_identity(size_t blocks,
                                          size_t layers,
                                          size_t channels,
                                          size_t h,
                                          size_t w,
                                          struct InvsharpNet **out);

// Write the network to a checkpoint file.
//
// # Safety
// `net` must come from this library; `path` must be NUL-terminated.
enum InvsharpStatus invsharp_net_save(const struct InvsharpNet *net, const char *path);

// Release a handle. Null is ignored.
//
// # Safety
// `net` must come from this library and not be used afterwards.
void invsharp_net_free(struct InvsharpNet *net);

// The image height and width the network was built for.
//
// # Safety
// All pointers must be valid.
enum InvsharpStatus invsharp_net_image_size(const struct InvsharpNet *net, size_t *h, size_t *w);

// Forward pass on a two-channel state of `len = 2 * h * w` values.
//
// # Safety
// `input` and `output` must hold `len` values.
enum InvsharpStatus invsharp_net_forward(const struct InvsharpNet *net,
                                         const double *input,
                                         double *output,
                                         size_t len);

// Inverse pass with `iters` fixed-point iterations per block; 0 uses the
// network's own setting.
//
// # Safety
// `input` and `output` must hold `len` values.
enum InvsharpStatus invsharp_net_inverse(const struct InvsharpNet *net,
                                         const double *input,
                                         double *output,
                                         size_t len,
                                         size_t iters);

// Sharpen a reconstruction of `len = h * w` values. With a null `mask` no
// data consistency is applied; otherwise `mask` (0/1 per bin) and the
// measured k-space `measured_re`/`measured_im` are replaced into the output
// spectrum.
//
// # Safety
// Non-null buffers must hold `len` values.
enum InvsharpStatus invsharp_net_sharpen(const struct InvsharpNet *net,
                                         const double *recon,
                                         const double *mask,
                                         const double *measured_re,
                                         const double *measured_im,
                                         double *output,
                                         size_t len);

// PSNR in dB of `a` against `b`; `+inf` for identical images.
//
// # Safety
// `a` and `b` must hold `h * w` values; `out` must be valid.
enum InvsharpStatus invsharp_psnr(const double *a,
                                  const double *b,
                                  size_t h,
                                  size_t w,
                                  double data_range,
                                  double *out);

// Single-scale SSIM of `a` against the reference `b`, with the data range
// taken from the reference maximum.
//
// # Safety
// `a` and `b` must hold `h * w` values; `out` must be valid.
enum InvsharpStatus invsharp_ssim(const double *a,
                                  const double *b,
                                  size_t h,
                                  size_t w,
                                  double *out);

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `cap`). Returns the buffer size needed for the full message.
//
// # Safety
// `buf` must hold `cap` bytes, or be null with `cap == 0`.
size_t invsharp_last_error(char *buf, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVSHARP_H */
