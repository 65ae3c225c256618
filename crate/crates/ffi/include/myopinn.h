#ifndef MYOPINN_H
#define MYOPINN_H

#include <stddef.h>
#include <stdint.h>

typedef enum MyoMethod {
  MYO_METHOD_PINN2CXM = 0,
  MYO_METHOD_PINN_MESH = 1,
  MYO_METHOD_PINN_REDUCED = 2,
  MYO_METHOD_PINN_COMBINED = 3,
  MYO_METHOD_NLLS = 4,
} MyoMethod;

typedef enum MyoParam {
  MYO_PARAM_FP = 0,
  MYO_PARAM_VP = 1,
  MYO_PARAM_VE = 2,
  MYO_PARAM_PS = 3,
} MyoParam;

// Result code of every fallible call.
typedef enum MyoStatus {
  MYO_STATUS_OK = 0,
  MYO_STATUS_NULL_POINTER = 1,
  MYO_STATUS_INVALID_INPUT = 2,
  MYO_STATUS_FORMAT = 3,
  MYO_STATUS_NUMERICAL = 4,
  MYO_STATUS_IO = 5,
  // The output buffer is too small; the required length was written.
  MYO_STATUS_BUFFER_TOO_SMALL = 6,
  MYO_STATUS_PANIC = 7,
} MyoStatus;

// Opaque curve dataset.
typedef struct MyoDataset MyoDataset;

// Opaque parameter maps with provenance.
typedef struct MyoMaps MyoMaps;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the calling thread's most recent failure; empty after a
// success. Valid until the next call on the same thread.
const char *myo_last_error(void);

// Reads a `PQD1` dataset file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum MyoStatus myo_dataset_read(const char *path, struct MyoDataset **out);

// Generates the 4 x 4 block phantom (ve = 0.2, PS = 1.5) with `block` pixels
// per block side. A non-finite or non-positive `snr` disables noise.
//
// # Safety
// `out` must be a valid pointer.
enum MyoStatus myo_dataset_generate_mini(size_t block,
                                         double snr,
                                         uint64_t seed,
                                         struct MyoDataset **out);

// Writes the dataset as `PQD1`.
//
// # Safety
// `ds` must come from a `myo_dataset_*` constructor; `path` NUL-terminated.
enum MyoStatus myo_dataset_write(const struct MyoDataset *ds, const char *path);

// Volume size and number of time points.
//
// # Safety
// All pointers must be valid.
enum MyoStatus myo_dataset_dims(const struct MyoDataset *ds,
                                size_t *nx,
                                size_t *ny,
                                size_t *nz,
                                size_t *n_time);

// Releases a dataset. Null is ignored.
//
// # Safety
// `ds` must be null or an unreleased handle.
void myo_dataset_free(struct MyoDataset *ds);

// Fits every pixel of `ds`. `iterations` overrides the PINN iteration count
// when non-zero and is ignored for NLLS.
//
// # Safety
// `ds` must be a valid handle and `out` a valid pointer.
enum MyoStatus myo_fit(const struct MyoDataset *ds,
                       enum MyoMethod method,
                       size_t iterations,
                       uint64_t seed,
                       struct MyoMaps **out);

// Reads a `PQM1` map file.
//
// # Safety
// `path` must be NUL-terminated and `out` valid.
enum MyoStatus myo_maps_read(const char *path, struct MyoMaps **out);

// Writes maps as `PQM1`.
//
// # Safety
// `maps` must be a valid handle; `path` NUL-terminated.
enum MyoStatus myo_maps_write(const struct MyoMaps *maps, const char *path);

// Copies one parameter map into `buf` (storage order, x fastest). With a
// short or null buffer, writes the required length to `len` and returns
// `BufferTooSmall`.
//
// # Safety
// `buf` must hold `*len` doubles; `len` must be valid.
enum MyoStatus myo_maps_get(const struct MyoMaps *maps,
                            enum MyoParam param,
                            double *buf,
                            size_t *len);

// Releases maps. Null is ignored.
//
// # Safety
// `maps` must be null or an unreleased handle.
void myo_maps_free(struct MyoMaps *maps);

// NMSE and SSIM (7 x 7 window) of one parameter against the dataset's
// ground truth. SSIM is NaN when the ground-truth map is constant.
//
// # Safety
// Handles must be valid; `nmse` and `ssim` valid pointers.
enum MyoStatus myo_compare(const struct MyoMaps *est,
                           const struct MyoDataset *truth,
                           enum MyoParam param,
                           double *nmse,
                           double *ssim);

// Tissue curve of the 2CXM for an AIF sampled at `t0 + i dt`, `i < n`.
//
// # Safety
// `aif` and `tissue` must each hold `n` doubles.
enum MyoStatus myo_solve_2cxm(double fp,
                              double vp,
                              double ve,
                              double ps,
                              double t0,
                              double dt,
                              size_t n,
                              const double *aif,
                              double *tissue);

// Plasma to blood flow and volume.
//
// # Safety
// `fb` and `vb` must be valid pointers.
enum MyoStatus myo_to_blood_units(double fp,
                                  double vp,
                                  double hct,
                                  double rho,
                                  double *fb,
                                  double *vb);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MYOPINN_H */
