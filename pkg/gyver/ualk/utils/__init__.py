from .parallel import map_rows, ordered_map, thread_count

__all__ = ['map_rows', 'ordered_map', 'thread_count']
