package app;

import java.util.ArrayList;
import java.util.List;
import java.util.logging.Logger;

/**
 * Keeps track of the items in a warehouse.
 */
public class Inventory {
    private static final Logger LOG = Logger.getLogger(Inventory.class.getName());

    private final List<Item> items = new ArrayList<>();
    private int total;

    public Inventory() {
        this.total = 0;
    }

    public void add(Item item) {
        items.add(item);
        total += item.quantity();
    }

    public void remove(Item item) {
        items.remove(item);
        total -= item.quantity();
    }

    public boolean contains(Item item) {
        return items.contains(item);
    }

    public List<Item> snapshot() {
        return new ArrayList<>(items);
    }

    /**
     * Number of distinct items.
     */
    public int countItems() {
        return items.size();
    }

    public Item first() {
        return items.isEmpty() ? null : items.get(0);
    }

    public Item last() {
        return items.isEmpty() ? null : items.get(items.size() - 1);
    }

    public int totalQuantity() {
        return total;
    }

    public void clear() {
        items.clear();
        total = 0;
    }

    public boolean isEmpty() {
        return items.isEmpty();
    }
}
