/* Exports nothing the loader needs. */
int cg_plugin_unrelated(void) { return 0; }
