/* C interface for native plugins built as shared objects. */
#ifndef CERTGATE_ENGINE_PLUGIN_ABI_H
#define CERTGATE_ENGINE_PLUGIN_ABI_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define CG_PLUGIN_INVALID 0
#define CG_PLUGIN_VALID 1
#define CG_PLUGIN_ABSTAIN 2
#define CG_PLUGIN_ERROR 3
/* Returned by asynchronous plugins; the verdict follows through the report callback. */
#define CG_PLUGIN_PENDING (-1)

typedef struct cg_query {
  uint64_t id;
  const char* hostname;
  const uint8_t* address; /* 16 bytes, IPv4 is IPv6-mapped */
  uint16_t port;
  const uint8_t* client_hello;
  size_t client_hello_len;
  const uint8_t* server_hello;
  size_t server_hello_len;
  size_t chain_len;
  const uint8_t* const* chain; /* DER, leaf first */
  const size_t* chain_lens;
} cg_query;

typedef void (*cg_report_fn)(void* context, uint64_t query_id, int verdict);

/* Required symbol. */
typedef int (*cg_plugin_query_fn)(const cg_query* query);
/* Optional for synchronous plugins, required when cg_plugin_async is exported and non-zero. */
typedef int (*cg_plugin_initialize_fn)(const char* data, cg_report_fn report, void* context);
/* Optional. */
typedef void (*cg_plugin_finalize_fn)(void);

#ifdef __cplusplus
}
#endif

#endif
