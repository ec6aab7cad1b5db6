#ifndef PSM_H
#define PSM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define PSM_MODE_READ 0
#define PSM_MODE_WRITE 1

typedef struct PsmTable PsmTable;
typedef struct PsmCell PsmCell;

/* Per-thread; null when the last call succeeded. */
const char *psm_last_error_name(void);
const char *psm_last_error_message(void);

PsmTable *psm_open(const char *path, int mode);
PsmTable *psm_create(const char *path, const char *desc_text);
int psm_finalize(PsmTable *t);
void psm_close(PsmTable *t);
uint64_t psm_nrows(PsmTable *t);
int psm_mode(PsmTable *t);
char *psm_desc_text(PsmTable *t);
void psm_string_free(char *s);

PsmCell *psm_get_cell(PsmTable *t, const char *column, uint64_t row);
const char *psm_cell_etype(const PsmCell *c);
size_t psm_cell_ndim(const PsmCell *c);
const size_t *psm_cell_shape(const PsmCell *c);
const uint8_t *psm_cell_data(const PsmCell *c);
size_t psm_cell_nbytes(const PsmCell *c);
void psm_cell_free(PsmCell *c);

int psm_put_cell(PsmTable *t, const char *column, uint64_t row, const char *etype,
                 size_t ndim, const size_t *shape, const uint8_t *data, size_t nbytes);

int psm_table_copy(const char *src, const char *dst, const char *manager);

#ifdef __cplusplus
}
#endif

#endif
